#include "minimm/sweep.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "minimm/config.hpp"
#include "minimm/runner.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace minimm {

SweepConfig parse_sweep_config(const json& j) {
    check_known_keys(j, {"base", "axes", "seeds", "seed_base", "workers", "out_root"}, "");
    SweepConfig cfg;
    if (j.contains("base")) {
        cfg.base = j.at("base");
        parse_run_config(cfg.base); // validate eagerly for field-level errors
    }
    if (j.contains("axes")) {
        const auto& ja = j.at("axes");
        check_known_keys(ja, {"method", "encoder_preset", "lm_preset", "posttrain_samples",
                              "shift_ratio"},
                         "axes");
        if (ja.contains("method")) cfg.axes.method = ja.at("method").get<std::vector<std::string>>();
        if (ja.contains("encoder_preset"))
            cfg.axes.encoder_preset = ja.at("encoder_preset").get<std::vector<std::string>>();
        if (ja.contains("lm_preset"))
            cfg.axes.lm_preset = ja.at("lm_preset").get<std::vector<std::string>>();
        if (ja.contains("posttrain_samples"))
            cfg.axes.posttrain_samples = ja.at("posttrain_samples").get<std::vector<int>>();
        if (ja.contains("shift_ratio"))
            cfg.axes.shift_ratio = ja.at("shift_ratio").get<std::vector<double>>();
    }
    if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<int>();
    if (j.contains("seed_base")) cfg.seed_base = j.at("seed_base").get<uint64_t>();
    if (j.contains("workers")) cfg.workers = j.at("workers").get<int>();
    if (j.contains("out_root")) cfg.out_root = j.at("out_root").get<std::string>();
    for (const auto& m : cfg.axes.method)
        if (m != "sft" && m != "dpo")
            throw std::invalid_argument("sweep: unknown method '" + m + "'");
    return cfg;
}

SweepConfig load_sweep_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("sweep: cannot open " + path);
    return parse_sweep_config(json::parse(in));
}

namespace {

std::string data_dir_for(const SweepConfig& cfg, int samples, double shift) {
    return (fs::path(cfg.out_root) / "data" /
            ("n" + std::to_string(samples) + "-r" + format_double(shift)))
        .string();
}

RunConfig cell_run_config(const SweepConfig& cfg, const std::string& enc,
                          const std::string& lm) {
    RunConfig rc = parse_run_config(cfg.base);
    rc.out_root = cfg.out_root;
    rc.model.encoder_preset = enc;
    rc.model.encoder.depth = 0;
    rc.model.lm_preset = lm;
    rc.model.lm.depth = 0;
    return rc;
}

} // namespace

std::vector<CellResult> run_sweep(const SweepConfig& cfg, std::ostream* log) {
    auto say = [&](const std::string& s) {
        if (log) (*log) << s << "\n" << std::flush;
    };

    // pre-generate datasets shared by cells
    for (int n : cfg.axes.posttrain_samples) {
        for (double r : cfg.axes.shift_ratio) {
            RunConfig rc = cell_run_config(cfg, cfg.axes.encoder_preset[0], cfg.axes.lm_preset[0]);
            rc.data.manifest.posttrain_count = n;
            rc.data.manifest.shift_ratio = r;
            rc.data.path = data_dir_for(cfg, n, r);
            if (!fs::exists(fs::path(rc.data.path) / "manifest.json")) {
                say("sweep: generating dataset " + rc.data.path);
                prepare_dataset(rc.data);
            }
        }
    }

    // one shared Stage-1 checkpoint per (encoder, lm) pair
    std::map<std::pair<std::string, std::string>, std::string> stage1;
    for (const auto& enc : cfg.axes.encoder_preset) {
        for (const auto& lm : cfg.axes.lm_preset) {
            RunConfig rc = cell_run_config(cfg, enc, lm);
            rc.stages = {"align", "pretrain"};
            rc.run_eval = false;
            rc.seed = cfg.seed_base;
            rc.data.path = data_dir_for(cfg, cfg.axes.posttrain_samples[0],
                                        cfg.axes.shift_ratio[0]);
            say("sweep: stage1 for encoder=" + enc + " lm=" + lm);
            auto out = run_train(rc, log);
            stage1[{enc, lm}] = out.final_checkpoint;
        }
    }

    // enumerate cells in a canonical order
    std::vector<CellResult> cells;
    for (const auto& enc : cfg.axes.encoder_preset)
        for (const auto& lm : cfg.axes.lm_preset)
            for (const auto& method : cfg.axes.method)
                for (int n : cfg.axes.posttrain_samples)
                    for (double r : cfg.axes.shift_ratio)
                        for (int s = 0; s < cfg.seeds; ++s) {
                            CellResult c;
                            c.method = method;
                            c.encoder_preset = enc;
                            c.lm_preset = lm;
                            c.posttrain_samples = n;
                            c.shift_ratio = r;
                            c.seed = cfg.seed_base + uint64_t(s);
                            cells.push_back(c);
                        }

    std::mutex mu;
    size_t next = 0;
    auto worker = [&]() {
#ifdef _OPENMP
        if (cfg.workers > 1) omp_set_num_threads(1);
#endif
        for (;;) {
            size_t i;
            {
                std::lock_guard<std::mutex> lock(mu);
                if (next >= cells.size()) return;
                i = next++;
            }
            CellResult& c = cells[i];
            try {
                RunConfig rc = cell_run_config(cfg, c.encoder_preset, c.lm_preset);
                rc.stages = {"posttrain"};
                rc.posttrain.method = c.method;
                if (rc.posttrain.lr == 0.0) rc.posttrain.lr = c.method == "dpo" ? 3e-5 : 3e-4;
                rc.init_checkpoint = stage1[{c.encoder_preset, c.lm_preset}];
                rc.seed = c.seed;
                rc.posttrain.seed = c.seed;
                rc.eval.seed = c.seed;
                rc.data.manifest.posttrain_count = c.posttrain_samples;
                rc.data.manifest.shift_ratio = c.shift_ratio;
                rc.data.path = data_dir_for(cfg, c.posttrain_samples, c.shift_ratio);
                rc.run_eval = true;
                auto out = run_train(rc, nullptr);
                c.run_dir = out.run_dir;
                c.report = out.report;
                c.ok = true;
                std::lock_guard<std::mutex> lock(mu);
                say("sweep: cell done method=" + c.method + " n=" +
                    std::to_string(c.posttrain_samples) + " r=" + format_double(c.shift_ratio) +
                    " seed=" + std::to_string(c.seed));
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(mu);
                say(std::string("sweep: cell FAILED: ") + e.what());
            }
        }
    };

    const int n_workers = std::max(1, cfg.workers);
    std::vector<std::thread> pool;
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    int missing = 0;
    for (const auto& c : cells) missing += c.ok ? 0 : 1;
    if (missing) say("sweep: warning, " + std::to_string(missing) + " cells missing; " +
                     "aggregating over the rest");

    fs::create_directories(cfg.out_root);
    {
        std::ofstream out(fs::path(cfg.out_root) / "aggregate.csv");
        out << aggregate_csv(cells);
    }

    // trend plots along each swept axis, one series per method
    const std::set<std::string> plot_metrics = {"vqa_accuracy", "linear_probe_accuracy",
                                                "segmentation_recall"};
    fs::create_directories(fs::path(cfg.out_root) / "plots");
    auto metric_mean = [&](const std::string& name, const std::string& domain,
                           const std::string& method, double axis_val,
                           const std::function<double(const CellResult&)>& axis) {
        double sum = 0.0;
        int n = 0;
        for (const auto& c : cells) {
            if (!c.ok || c.method != method || axis(c) != axis_val) continue;
            for (const auto& row : c.report.rows)
                if (row.name == name && row.domain == domain) {
                    sum += row.value;
                    ++n;
                }
        }
        return n ? sum / n : std::nan("");
    };
    auto plot_axis = [&](const std::string& axis_name,
                         const std::vector<double>& axis_vals,
                         const std::function<double(const CellResult&)>& axis) {
        if (axis_vals.size() < 2) return;
        std::set<std::pair<std::string, std::string>> metrics;
        for (const auto& c : cells)
            if (c.ok)
                for (const auto& row : c.report.rows)
                    if (plot_metrics.count(row.name)) metrics.insert({row.name, row.domain});
        for (const auto& [name, domain] : metrics) {
            std::vector<std::pair<std::string, std::vector<double>>> series;
            for (const auto& method : cfg.axes.method) {
                std::vector<double> ys;
                for (double v : axis_vals) ys.push_back(metric_mean(name, domain, method, v, axis));
                series.push_back({method, ys});
            }
            const std::string fname = name + (domain.empty() ? "" : "_" + domain) + "__" +
                                      axis_name + ".svg";
            std::ofstream out(fs::path(cfg.out_root) / "plots" / fname);
            out << svg_line_plot(name + (domain.empty() ? "" : " (" + domain + ")") + " vs " +
                                     axis_name,
                                 axis_vals, series);
        }
    };
    {
        std::vector<double> xs(cfg.axes.posttrain_samples.begin(),
                               cfg.axes.posttrain_samples.end());
        plot_axis("posttrain_samples", xs,
                  [](const CellResult& c) { return double(c.posttrain_samples); });
    }
    plot_axis("shift_ratio", cfg.axes.shift_ratio,
              [](const CellResult& c) { return c.shift_ratio; });

    return cells;
}

std::string aggregate_csv(const std::vector<CellResult>& cells) {
    std::string out =
        "kind,method,encoder,lm,posttrain_samples,shift_ratio,seed,metric,domain,value,sd\n";
    // raw rows, canonical order
    std::vector<const CellResult*> ordered;
    for (const auto& c : cells)
        if (c.ok) ordered.push_back(&c);
    std::sort(ordered.begin(), ordered.end(), [](const CellResult* a, const CellResult* b) {
        return std::tie(a->method, a->encoder_preset, a->lm_preset, a->posttrain_samples,
                        a->shift_ratio, a->seed) <
               std::tie(b->method, b->encoder_preset, b->lm_preset, b->posttrain_samples,
                        b->shift_ratio, b->seed);
    });
    using GroupKey = std::tuple<std::string, std::string, std::string, int, double, std::string,
                                std::string>;
    std::map<GroupKey, std::vector<double>> groups;
    for (const CellResult* c : ordered) {
        auto rows = c->report.rows;
        std::sort(rows.begin(), rows.end(), [](const MetricRow& a, const MetricRow& b) {
            return std::tie(a.name, a.domain) < std::tie(b.name, b.domain);
        });
        for (const auto& row : rows) {
            out += "raw," + c->method + "," + c->encoder_preset + "," + c->lm_preset + "," +
                   std::to_string(c->posttrain_samples) + "," + format_double(c->shift_ratio) +
                   "," + std::to_string(c->seed) + "," + row.name + "," + row.domain + "," +
                   format_double(row.value) + ",\n";
            groups[{c->method, c->encoder_preset, c->lm_preset, c->posttrain_samples,
                    c->shift_ratio, row.name, row.domain}]
                .push_back(row.value);
        }
    }
    for (const auto& [key, values] : groups) {
        const auto& [method, enc, lm, n, r, name, domain] = key;
        double mean = 0.0;
        for (double v : values) mean += v;
        mean /= double(values.size());
        double var = 0.0;
        for (double v : values) var += (v - mean) * (v - mean);
        const double sd = values.size() > 1 ? std::sqrt(var / double(values.size() - 1)) : 0.0;
        out += "aggregate," + method + "," + enc + "," + lm + "," + std::to_string(n) + "," +
               format_double(r) + ",," + name + "," + domain + "," + format_double(mean) + "," +
               format_double(sd) + "\n";
    }
    return out;
}

std::string svg_line_plot(const std::string& title, const std::vector<double>& xs,
                          const std::vector<std::pair<std::string, std::vector<double>>>& series) {
    const int w = 640, h = 420, ml = 70, mr = 30, mt = 50, mb = 50;
    double lo = 1e300, hi = -1e300;
    for (const auto& [_, ys] : series)
        for (double y : ys)
            if (std::isfinite(y)) {
                lo = std::min(lo, y);
                hi = std::max(hi, y);
            }
    if (lo > hi) {
        lo = 0.0;
        hi = 1.0;
    }
    if (hi - lo < 1e-12) {
        hi += 0.5;
        lo -= 0.5;
    }
    const double xlo = xs.front(), xhi = xs.back();
    auto px = [&](double x) {
        return ml + (x - xlo) / std::max(1e-12, xhi - xlo) * (w - ml - mr);
    };
    auto py = [&](double y) { return h - mb - (y - lo) / (hi - lo) * (h - mt - mb); };

    const char* colors[] = {"#d62728", "#1f77b4", "#2ca02c", "#9467bd"};
    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w) +
                      "\" height=\"" + std::to_string(h) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += "<text x=\"" + std::to_string(w / 2) + "\" y=\"24\" text-anchor=\"middle\" "
           "font-family=\"sans-serif\" font-size=\"15\">" + title + "</text>\n";
    svg += "<line x1=\"" + std::to_string(ml) + "\" y1=\"" + std::to_string(h - mb) +
           "\" x2=\"" + std::to_string(w - mr) + "\" y2=\"" + std::to_string(h - mb) +
           "\" stroke=\"black\"/>\n";
    svg += "<line x1=\"" + std::to_string(ml) + "\" y1=\"" + std::to_string(mt) + "\" x2=\"" +
           std::to_string(ml) + "\" y2=\"" + std::to_string(h - mb) + "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double y = lo + (hi - lo) * t / 4.0;
        svg += "<text x=\"" + std::to_string(ml - 8) + "\" y=\"" +
               std::to_string(py(y) + 4) + "\" text-anchor=\"end\" font-family=\"sans-serif\" "
               "font-size=\"11\">" + format_double(std::round(y * 1000) / 1000) + "</text>\n";
    }
    for (double x : xs)
        svg += "<text x=\"" + std::to_string(px(x)) + "\" y=\"" + std::to_string(h - mb + 18) +
               "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
               format_double(x) + "</text>\n";
    int si = 0;
    for (const auto& [label, ys] : series) {
        std::string pts;
        for (size_t i = 0; i < xs.size(); ++i) {
            if (!std::isfinite(ys[i])) continue;
            pts += std::to_string(px(xs[i])) + "," + std::to_string(py(ys[i])) + " ";
        }
        const std::string color = colors[size_t(si) % 4];
        svg += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"2\" points=\"" +
               pts + "\"/>\n";
        for (size_t i = 0; i < xs.size(); ++i)
            if (std::isfinite(ys[i]))
                svg += "<circle cx=\"" + std::to_string(px(xs[i])) + "\" cy=\"" +
                       std::to_string(py(ys[i])) + "\" r=\"3\" fill=\"" + color + "\"/>\n";
        svg += "<text x=\"" + std::to_string(w - mr - 100) + "\" y=\"" +
               std::to_string(mt + 16 * si) + "\" font-family=\"sans-serif\" font-size=\"12\" "
               "fill=\"" + color + "\">" + label + "</text>\n";
        ++si;
    }
    svg += "</svg>\n";
    return svg;
}

} // namespace minimm

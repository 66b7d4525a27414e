#include "railmatch/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace railmatch {

using nlohmann::json;

void validate(const SuccessCriterion& c) {
    if (!(c.tolerance_mm > 0.0)) throw std::runtime_error("tolerance must be positive");
}

bool is_success(const Displacement& pred, const Displacement& label, const SuccessCriterion& c) {
    if (!std::isfinite(pred.dx) || !std::isfinite(pred.dy) || !std::isfinite(label.dx) ||
        !std::isfinite(label.dy))
        throw std::runtime_error("is_success: non-finite input");
    return std::abs(pred.dx - label.dx) < c.tolerance_mm &&
           std::abs(pred.dy - label.dy) < c.tolerance_mm;
}

double accuracy(const std::vector<Displacement>& preds, const std::vector<Displacement>& labels,
                const SuccessCriterion& c) {
    if (preds.empty()) throw std::runtime_error("accuracy: empty input");
    if (preds.size() != labels.size()) throw std::runtime_error("accuracy: length mismatch");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (is_success(preds[i], labels[i], c)) ++hits;
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

void validate(const EnsembleSpec& s) {
    if (s.members.empty()) throw std::runtime_error("ensemble has no members");
    if (s.members.size() != s.weights.size())
        throw std::runtime_error("ensemble members/weights length mismatch");
    double sum = 0.0;
    for (double w : s.weights) {
        if (w < 0.0) throw std::runtime_error("ensemble weights must be non-negative");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw std::runtime_error("ensemble weights must sum to 1");
}

EnsembleSpec mean4(const std::vector<std::string>& members) {
    if (members.size() != 4) throw std::runtime_error("mean4 needs exactly 4 members");
    return {members, {0.25, 0.25, 0.25, 0.25}};
}

EnsembleSpec weighted3(const std::vector<std::string>& members) {
    if (members.size() != 3) throw std::runtime_error("weighted3 needs exactly 3 members");
    return {members, {0.5, 0.25, 0.25}};
}

EnsembleSpec read_ensemble_spec(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open ensemble spec " + path);
    json j = json::parse(f);
    EnsembleSpec s;
    s.members = j.at("members").get<std::vector<std::string>>();
    s.weights = j.at("weights").get<std::vector<double>>();
    validate(s);
    return s;
}

void write_ensemble_spec(const EnsembleSpec& s, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f << json{{"members", s.members}, {"weights", s.weights}}.dump(2) << "\n";
}

namespace {

struct LoadedMember {
    Checkpoint ckpt;
    nn::Network<float> net;
};

std::vector<LoadedMember> load_members(const EnsembleSpec& spec) {
    validate(spec);
    double l_norm = 0.0;
    std::vector<LoadedMember> out;
    for (const auto& path : spec.members) {
        Checkpoint c;
        try {
            c = load_checkpoint_meta(path);
        } catch (const std::exception&) {
            throw std::runtime_error("ensemble member checkpoint missing or unreadable: " + path);
        }
        if (out.empty())
            l_norm = c.train.l_norm;
        else if (std::abs(c.train.l_norm - l_norm) > 1e-12)
            throw std::runtime_error("ensemble members disagree on label normalization: " + path);
        out.push_back({c, load_checkpoint_network(c)});
    }
    return out;
}

MatchResult combine(std::vector<LoadedMember>& members, const std::vector<double>& weights,
                    const Profile& designed, const Profile& measured) {
    MatchResult r;
    r.displacement = {0.0, 0.0};
    for (std::size_t i = 0; i < members.size(); ++i) {
        MatchResult m = predict_mm(members[i].ckpt, members[i].net, designed, measured);
        if (!m.error.empty()) {
            r.error = m.error;
            return r;
        }
        r.displacement.dx += weights[i] * m.displacement.dx;
        r.displacement.dy += weights[i] * m.displacement.dy;
    }
    r.converged = true;
    r.iterations_used = 1;
    return r;
}

} // namespace

MatchResult ensemble_predict(const EnsembleSpec& spec, const Profile& designed,
                             const Profile& measured) {
    auto members = load_members(spec);
    return combine(members, spec.weights, designed, measured);
}

EvalReport evaluate(const Matcher& matcher, const std::vector<Sample>& samples,
                    const SuccessCriterion& c, const std::string& split_name) {
    validate(c);
    if (samples.empty()) throw std::runtime_error("evaluate: empty sample set");

    // Load neural artifacts once up front.
    std::vector<LoadedMember> members;
    std::vector<double> weights;
    if (matcher.kind == Matcher::Kind::CheckpointFile) {
        EnsembleSpec single{{matcher.checkpoint_path}, {1.0}};
        members = load_members(single);
        weights = {1.0};
    } else if (matcher.kind == Matcher::Kind::Ensemble) {
        members = load_members(matcher.ensemble);
        weights = matcher.ensemble.weights;
    }

    EvalReport report;
    report.split = split_name;
    report.tolerance_mm = c.tolerance_mm;
    report.rows.resize(samples.size());

    const bool classical =
        matcher.kind == Matcher::Kind::Icp || matcher.kind == Matcher::Kind::Ransac;
#pragma omp parallel for schedule(dynamic, 4) if (classical)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(samples.size()); ++i) {
        const Sample& s = samples[static_cast<std::size_t>(i)];
        SampleEval row;
        row.id = s.id;
        row.label_dx = s.label.dx;
        row.label_dy = s.label.dy;
        MatchResult m;
        try {
            switch (matcher.kind) {
                case Matcher::Kind::Icp:
                    m = icp_translate(s.measured, s.designed, matcher.icp);
                    break;
                case Matcher::Kind::Ransac:
                    m = ransac_translate(s.measured, s.designed, matcher.ransac);
                    break;
                default:
                    m = combine(members, weights, s.designed, s.measured);
                    break;
            }
        } catch (const std::exception& e) {
            m.error = e.what();
        }
        if (!m.error.empty()) {
            row.error = m.error;
        } else {
            row.pred_dx = m.displacement.dx;
            row.pred_dy = m.displacement.dy;
            row.success = is_success(m.displacement, s.label, c);
        }
        report.rows[static_cast<std::size_t>(i)] = std::move(row);
    }

    std::sort(report.rows.begin(), report.rows.end(),
              [](const SampleEval& a, const SampleEval& b) { return a.id < b.id; });

    std::size_t hits = 0;
    double se = 0.0;
    for (const auto& row : report.rows) {
        if (row.success) ++hits;
        const double ex = row.pred_dx - row.label_dx;
        const double ey = row.pred_dy - row.label_dy;
        se += ex * ex + ey * ey;
        report.max_abs_err_dx = std::max(report.max_abs_err_dx, std::abs(ex));
        report.max_abs_err_dy = std::max(report.max_abs_err_dy, std::abs(ey));
    }
    report.accuracy = static_cast<double>(hits) / static_cast<double>(report.rows.size());
    report.mse_mm2 = se / static_cast<double>(2 * report.rows.size());
    return report;
}

std::string eval_report_to_json(const EvalReport& r) {
    json rows = json::array();
    for (const auto& row : r.rows) {
        json jr{{"id", row.id},        {"pred_dx", row.pred_dx},   {"pred_dy", row.pred_dy},
                {"label_dx", row.label_dx}, {"label_dy", row.label_dy}, {"success", row.success}};
        if (!row.error.empty()) jr["error"] = row.error;
        rows.push_back(jr);
    }
    json j{{"split", r.split},
           {"tolerance_mm", r.tolerance_mm},
           {"accuracy", r.accuracy},
           {"mse_mm2", r.mse_mm2},
           {"max_abs_err_dx", r.max_abs_err_dx},
           {"max_abs_err_dy", r.max_abs_err_dy},
           {"samples", rows}};
    return j.dump(2);
}

void write_eval_report(const EvalReport& r, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f << eval_report_to_json(r) << "\n";
}

EvalReport read_eval_report(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open eval report " + path);
    json j = json::parse(f);
    EvalReport r;
    r.split = j.at("split");
    r.tolerance_mm = j.at("tolerance_mm");
    r.accuracy = j.at("accuracy");
    r.mse_mm2 = j.at("mse_mm2");
    r.max_abs_err_dx = j.at("max_abs_err_dx");
    r.max_abs_err_dy = j.at("max_abs_err_dy");
    for (const auto& jr : j.at("samples")) {
        SampleEval row;
        row.id = jr.at("id");
        row.pred_dx = jr.at("pred_dx");
        row.pred_dy = jr.at("pred_dy");
        row.label_dx = jr.at("label_dx");
        row.label_dy = jr.at("label_dy");
        row.success = jr.at("success");
        if (jr.contains("error")) row.error = jr.at("error");
        r.rows.push_back(std::move(row));
    }
    return r;
}

void error_scatter_export(const EvalReport& r, const std::string& csv_path,
                          const std::string& svg_path) {
    if (r.rows.empty()) throw std::runtime_error("error_scatter_export: empty report");
    {
        std::ofstream f(csv_path);
        if (!f) throw std::runtime_error("cannot open " + csv_path + " for writing");
        f << "id,err_dx_mm,err_dy_mm,success\n";
        char line[256];
        for (const auto& row : r.rows) {
            std::snprintf(line, sizeof(line), "%s,%.9g,%.9g,%d\n", row.id.c_str(),
                          row.pred_dx - row.label_dx, row.pred_dy - row.label_dy,
                          row.success ? 1 : 0);
            f << line;
        }
    }

    // SVG: 1 mm of error = 100 user units, centered in a square viewport
    // sized to fit every point plus the tolerance box.
    const double unit_per_mm = 100.0;
    double extent = r.tolerance_mm;
    for (const auto& row : r.rows) {
        extent = std::max(extent, std::abs(row.pred_dx - row.label_dx));
        extent = std::max(extent, std::abs(row.pred_dy - row.label_dy));
    }
    extent *= 1.15;
    const double half = extent * unit_per_mm;
    const double tol = r.tolerance_mm * unit_per_mm;
    std::ofstream f(svg_path);
    if (!f) throw std::runtime_error("cannot open " + svg_path + " for writing");
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"%.3f %.3f %.3f %.3f\">\n",
                  -half, -half, 2 * half, 2 * half);
    f << buf;
    std::snprintf(buf, sizeof(buf),
                  "<rect x=\"%.3f\" y=\"%.3f\" width=\"%.3f\" height=\"%.3f\" fill=\"none\" "
                  "stroke=\"black\" stroke-width=\"%.3f\" class=\"tolerance-box\"/>\n",
                  -tol, -tol, 2 * tol, 2 * tol, half / 200.0);
    f << buf;
    for (const auto& row : r.rows) {
        std::snprintf(buf, sizeof(buf),
                      "<circle cx=\"%.3f\" cy=\"%.3f\" r=\"%.3f\" fill=\"%s\"/>\n",
                      (row.pred_dx - row.label_dx) * unit_per_mm,
                      -(row.pred_dy - row.label_dy) * unit_per_mm, half / 100.0,
                      row.success ? "red" : "blue");
        f << buf;
    }
    f << "</svg>\n";
}

} // namespace railmatch

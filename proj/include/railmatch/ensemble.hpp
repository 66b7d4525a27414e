#pragma once

#include <string>
#include <vector>

#include "railmatch/registration.hpp"
#include "railmatch/synthetic.hpp"
#include "railmatch/train.hpp"

namespace railmatch {

/// Per-axis absolute error strictly below the tolerance on both axes.
struct SuccessCriterion {
    double tolerance_mm = 0.4;
};

void validate(const SuccessCriterion& c);

bool is_success(const Displacement& pred, const Displacement& label, const SuccessCriterion& c);

double accuracy(const std::vector<Displacement>& preds, const std::vector<Displacement>& labels,
                const SuccessCriterion& c);

struct EnsembleSpec {
    std::vector<std::string> members; // checkpoint paths
    std::vector<double> weights;      // non-negative, sum to 1
};

void validate(const EnsembleSpec& s);

/// Four-way mean: equal weights over the given members.
EnsembleSpec mean4(const std::vector<std::string>& members);
/// The 0.5 / 0.25 / 0.25 weighted triple.
EnsembleSpec weighted3(const std::vector<std::string>& members);

EnsembleSpec read_ensemble_spec(const std::string& path);
void write_ensemble_spec(const EnsembleSpec& s, const std::string& path);

/// Componentwise convex combination of the member predictions, in mm.
MatchResult ensemble_predict(const EnsembleSpec& spec, const Profile& designed,
                             const Profile& measured);

struct Matcher {
    enum class Kind { CheckpointFile, Ensemble, Icp, Ransac };
    Kind kind = Kind::Icp;
    std::string checkpoint_path;
    EnsembleSpec ensemble;
    IcpConfig icp;
    RansacConfig ransac;
};

struct SampleEval {
    std::string id;
    double pred_dx = 0.0, pred_dy = 0.0;
    double label_dx = 0.0, label_dy = 0.0;
    bool success = false;
    std::string error; // non-empty when matching this sample failed
};

struct EvalReport {
    std::string split;
    double tolerance_mm = 0.4;
    double accuracy = 0.0;
    double mse_mm2 = 0.0; // mean over both axes
    double max_abs_err_dx = 0.0, max_abs_err_dy = 0.0;
    std::vector<SampleEval> rows;
};

/// Runs the matcher over every sample; failures are recorded per row and do
/// not stop the evaluation. Rows are ordered by sample id.
EvalReport evaluate(const Matcher& matcher, const std::vector<Sample>& samples,
                    const SuccessCriterion& c, const std::string& split_name = "");

std::string eval_report_to_json(const EvalReport& r);
void write_eval_report(const EvalReport& r, const std::string& path);
EvalReport read_eval_report(const std::string& path);

/// CSV of per-sample errors plus an SVG scatter with the tolerance box.
void error_scatter_export(const EvalReport& r, const std::string& csv_path,
                          const std::string& svg_path);

} // namespace railmatch

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "covexplain/classifier.hpp"
#include "covexplain/corpus.hpp"
#include "covexplain/embed.hpp"

namespace covexplain::ablate {

enum class Group { Online, Offline, Hybrid };
std::string_view to_string(Group group) noexcept;
Group parse_group(std::string_view text);

struct FeatureConfig {
    std::string name;
    std::vector<std::string> online;
    std::vector<std::string> offline;
    Group group = Group::Online;

    embed::FeatureSelection selection() const;
    friend bool operator==(const FeatureConfig&, const FeatureConfig&) = default;
};

// Each single online feature, all online, every offline subset of size
// three (combination order), all offline, then online + offline. With fewer
// than three offline features the size-three block is skipped and a warning
// is appended to `warnings`.
std::vector<FeatureConfig> enumerate_feature_sets(std::span<const std::string> offline,
                                                  std::span<const std::string> online,
                                                  std::vector<std::string>* warnings = nullptr);

struct ModelEntry {
    std::string name;
    std::function<std::unique_ptr<Classifier>()> make;
};
std::vector<ModelEntry> model_entries(std::span<const ModelKind> kinds, const ClassifierOptions& options);

struct RunOptions {
    std::size_t replicates = 20;
    std::uint64_t base_seed = 0;
    // 0 means one worker per hardware thread. COVEXPLAIN_THREADS caps either way.
    std::size_t threads = 0;
    std::function<void(std::string_view)> progress;
};

// Number of workers to use for a request, after the COVEXPLAIN_THREADS cap.
std::size_t worker_count(std::size_t requested);

struct Cell {
    std::vector<double> accuracies;  // percent, one per replicate
    std::optional<std::string> error;

    bool ok() const noexcept { return !error.has_value(); }
    double mean() const;
    // Sample standard deviation; 0 for a single replicate.
    double stddev() const;
};

struct AblationReport {
    std::vector<FeatureConfig> configs;
    std::vector<std::string> models;
    std::vector<std::uint64_t> seeds;
    // cells[config][model]
    std::vector<std::vector<Cell>> cells;
};

// For replicate r the training slices are balance-sampled with seed
// base_seed + r; every model is trained on every configuration and scored on
// the (fixed) last slice. Failed cells carry their error; the rest proceed.
AblationReport run_matrix(const corpus::Corpus& corpus, const embed::EmbeddingMatrix* tweets,
                          const embed::EmbeddingMatrix* descriptions, const corpus::TimeSlices& slices,
                          std::span<const FeatureConfig> configs, std::span<const ModelEntry> models,
                          const RunOptions& options);

struct SummaryCell {
    std::string model;
    double mean_acc = 0.0;
    double std_acc = 0.0;
    std::size_t replicates = 0;
    std::string status = "ok";

    bool ok() const noexcept { return status == "ok"; }
};

struct SummaryRow {
    Group group = Group::Online;
    std::string config;
    std::vector<SummaryCell> cells;
};

struct Summary {
    std::vector<std::string> models;
    std::vector<SummaryRow> rows;
};

Summary summarize(const AblationReport& report);

// "MM.MM ± S.S"
std::string format_cell(double mean, double stddev);

// group,config,model,mean_acc,std_acc,replicates,status
void write_summary_csv(std::ostream& out, const Summary& summary);
// Errors name `source` and the offending row.
Summary read_summary_csv(std::istream& in, std::string_view source);

// Rows grouped Online/Offline/Hybrid; per model column the best cell is
// bold and the runner-up underlined.
std::string render_markdown(const Summary& summary);

}  // namespace covexplain::ablate

#include "covexplain/ablate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "covexplain/error.hpp"
#include "covexplain/random.hpp"
#include "csv.hpp"

namespace covexplain::ablate {

namespace {

std::string display(std::string_view feature) {
    if (feature == embed::kTweetSegment) return "Tweets";
    if (feature == embed::kDescriptionSegment) return "Description";
    if (feature == corpus::kRacePic) return "Race_pic";
    std::string out(feature);
    if (!out.empty() && out[0] >= 'a' && out[0] <= 'z') out[0] = static_cast<char>(out[0] - 'a' + 'A');
    return out;
}

std::string joined(const std::vector<std::string>& names) {
    std::string out;
    for (const auto& n : names) {
        if (!out.empty()) out += '+';
        out += display(n);
    }
    return out;
}

// Index combinations of size k from n, in lexicographic order.
void combinations(std::size_t n, std::size_t k, std::vector<std::vector<std::size_t>>& out) {
    std::vector<std::size_t> idx(k);
    for (std::size_t i = 0; i < k; ++i) idx[i] = i;
    while (true) {
        out.push_back(idx);
        std::size_t i = k;
        while (i > 0 && idx[i - 1] == n - k + (i - 1)) --i;
        if (i == 0) return;
        ++idx[i - 1];
        for (std::size_t j = i; j < k; ++j) idx[j] = idx[j - 1] + 1;
    }
}

std::string fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return buf;
}

}  // namespace

std::string_view to_string(Group group) noexcept {
    switch (group) {
        case Group::Online: return "Online";
        case Group::Offline: return "Offline";
        case Group::Hybrid: return "Hybrid";
    }
    return "?";
}

Group parse_group(std::string_view text) {
    if (text == "Online") return Group::Online;
    if (text == "Offline") return Group::Offline;
    if (text == "Hybrid") return Group::Hybrid;
    throw InvalidArgument("unknown feature group \"" + std::string(text) + "\"");
}

embed::FeatureSelection FeatureConfig::selection() const {
    embed::FeatureSelection sel;
    for (const auto& f : online) {
        if (f == embed::kTweetSegment) sel.tweet = true;
        else if (f == embed::kDescriptionSegment) sel.description = true;
        else throw InvalidArgument("unknown online feature \"" + f + "\"");
    }
    for (const auto& f : offline) sel.offline.insert(f);
    return sel;
}

std::vector<FeatureConfig> enumerate_feature_sets(std::span<const std::string> offline,
                                                  std::span<const std::string> online,
                                                  std::vector<std::string>* warnings) {
    std::vector<FeatureConfig> out;
    const std::vector<std::string> on(online.begin(), online.end());
    const std::vector<std::string> off(offline.begin(), offline.end());
    if (!on.empty()) {
        for (const auto& f : on) out.push_back(FeatureConfig{display(f), {f}, {}, Group::Online});
        out.push_back(FeatureConfig{"All", on, {}, Group::Online});
    }
    if (!off.empty()) {
        if (off.size() >= 3) {
            std::vector<std::vector<std::size_t>> combos;
            combinations(off.size(), 3, combos);
            for (const auto& c : combos) {
                std::vector<std::string> subset;
                for (const auto i : c) subset.push_back(off[i]);
                out.push_back(FeatureConfig{joined(subset), {}, subset, Group::Offline});
            }
        } else if (warnings != nullptr) {
            warnings->push_back("only " + std::to_string(off.size()) +
                                " offline features; skipping the size-three combinations");
        }
        out.push_back(FeatureConfig{"All", {}, off, Group::Offline});
    }
    if (!on.empty() && !off.empty()) out.push_back(FeatureConfig{"Online+Offline", on, off, Group::Hybrid});
    return out;
}

std::vector<ModelEntry> model_entries(std::span<const ModelKind> kinds, const ClassifierOptions& options) {
    std::vector<ModelEntry> out;
    for (const auto kind : kinds)
        out.push_back(ModelEntry{std::string(display_name(kind)), [kind, options] { return make_classifier(kind, options); }});
    return out;
}

std::size_t worker_count(std::size_t requested) {
    std::size_t n = requested > 0 ? requested : std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("COVEXPLAIN_THREADS"); env != nullptr && *env != '\0') {
        char* end = nullptr;
        const unsigned long long cap = std::strtoull(env, &end, 10);
        if (end != nullptr && *end == '\0' && cap > 0) n = std::min<std::size_t>(n, static_cast<std::size_t>(cap));
    }
    return n;
}

double Cell::mean() const {
    if (accuracies.empty()) return 0.0;
    double s = 0.0;
    for (const double a : accuracies) s += a;
    return s / static_cast<double>(accuracies.size());
}

double Cell::stddev() const {
    if (accuracies.size() < 2) return 0.0;
    const double m = mean();
    double ss = 0.0;
    for (const double a : accuracies) ss += (a - m) * (a - m);
    return std::sqrt(ss / static_cast<double>(accuracies.size() - 1));
}

AblationReport run_matrix(const corpus::Corpus& corpus, const embed::EmbeddingMatrix* tweets,
                          const embed::EmbeddingMatrix* descriptions, const corpus::TimeSlices& slices,
                          std::span<const FeatureConfig> configs, std::span<const ModelEntry> models,
                          const RunOptions& options) {
    if (configs.empty()) throw InvalidArgument("run_matrix: no feature configurations");
    if (models.empty()) throw InvalidArgument("run_matrix: no models");
    if (options.replicates == 0) throw InvalidArgument("run_matrix: need at least one replicate");

    const auto train_all = slices.train_indices();
    const auto& test = slices.test_indices();
    if (train_all.empty()) throw InvalidArgument("run_matrix: no training slices");
    const std::size_t replicates = options.replicates;

    AblationReport report;
    report.configs.assign(configs.begin(), configs.end());
    for (const auto& m : models) report.models.push_back(m.name);
    std::vector<std::vector<std::size_t>> balanced(replicates);
    for (std::size_t r = 0; r < replicates; ++r) {
        report.seeds.push_back(options.base_seed + r);
        balanced[r] = corpus::balance_indices(corpus.posts, train_all, options.base_seed + r);
    }
    std::vector<std::size_t> row_of(corpus.posts.size(), 0);
    for (std::size_t i = 0; i < train_all.size(); ++i) row_of[train_all[i]] = i;

    struct Prepared {
        embed::Dataset train;
        embed::Dataset test;
        std::optional<std::string> error;
    };
    std::vector<Prepared> prepared(configs.size());
    for (std::size_t c = 0; c < configs.size(); ++c) {
        try {
            const auto sel = configs[c].selection();
            prepared[c].train = embed::build_dataset(corpus, train_all, tweets, descriptions, sel);
            prepared[c].test = embed::build_dataset(corpus, test, tweets, descriptions, sel);
        } catch (const std::exception& e) {
            prepared[c].error = e.what();
        }
    }

    const std::size_t per_config = models.size() * replicates;
    const std::size_t total = configs.size() * per_config;
    std::vector<double> acc(total, 0.0);
    std::vector<std::optional<std::string>> err(total);
    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> done{0};
    std::mutex progress_mutex;

    const auto run_task = [&](std::size_t task) {
        const std::size_t c = task / per_config;
        const std::size_t m = (task % per_config) / replicates;
        const std::size_t r = task % replicates;
        const auto& prep = prepared[c];
        if (prep.error) {
            err[task] = *prep.error;
            return;
        }
        try {
            const auto& rows = balanced[r];
            embed::FeatureMatrix x(static_cast<Eigen::Index>(rows.size()), prep.train.features.cols());
            std::vector<corpus::StanceLabel> y(rows.size());
            for (std::size_t i = 0; i < rows.size(); ++i) {
                const auto src = static_cast<Eigen::Index>(row_of[rows[i]]);
                x.row(static_cast<Eigen::Index>(i)) = prep.train.features.row(src);
                y[i] = prep.train.labels[static_cast<std::size_t>(src)];
            }
            auto clf = models[m].make();
            clf->fit(x, y, derive_seed(options.base_seed, c, m, r));
            acc[task] = 100.0 * accuracy(clf->predict(prep.test.features), prep.test.labels);
        } catch (const std::exception& e) {
            err[task] = e.what();
        }
    };

    const std::size_t workers = std::min(worker_count(options.threads), total);
    const auto worker = [&] {
        for (std::size_t task; (task = next.fetch_add(1)) < total;) {
            run_task(task);
            const std::size_t finished = done.fetch_add(1) + 1;
            if (options.progress) {
                const std::size_t c = task / per_config;
                const std::size_t m = (task % per_config) / replicates;
                std::lock_guard lock(progress_mutex);
                options.progress("[" + std::to_string(finished) + "/" + std::to_string(total) + "] " +
                                 std::string(to_string(configs[c].group)) + " " + configs[c].name + " / " +
                                 models[m].name + " r" + std::to_string(task % replicates) +
                                 (err[task] ? " failed: " + *err[task] : ""));
            }
        }
    };
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    }

    report.cells.assign(configs.size(), std::vector<Cell>(models.size()));
    for (std::size_t c = 0; c < configs.size(); ++c)
        for (std::size_t m = 0; m < models.size(); ++m) {
            auto& cell = report.cells[c][m];
            for (std::size_t r = 0; r < replicates; ++r) {
                const std::size_t task = c * per_config + m * replicates + r;
                if (err[task] && !cell.error) cell.error = *err[task];
                cell.accuracies.push_back(acc[task]);
            }
            if (cell.error) cell.accuracies.clear();
        }
    return report;
}

Summary summarize(const AblationReport& report) {
    Summary s;
    s.models = report.models;
    for (std::size_t c = 0; c < report.configs.size(); ++c) {
        SummaryRow row{report.configs[c].group, report.configs[c].name, {}};
        for (std::size_t m = 0; m < report.models.size(); ++m) {
            const auto& cell = report.cells.at(c).at(m);
            SummaryCell sc;
            sc.model = report.models[m];
            sc.replicates = report.seeds.size();
            if (cell.ok()) {
                sc.mean_acc = cell.mean();
                sc.std_acc = cell.stddev();
            } else {
                sc.status = "error: " + *cell.error;
            }
            row.cells.push_back(std::move(sc));
        }
        s.rows.push_back(std::move(row));
    }
    return s;
}

std::string format_cell(double mean, double stddev) { return fixed(mean, 2) + " ± " + fixed(stddev, 1); }

void write_summary_csv(std::ostream& out, const Summary& summary) {
    out << "group,config,model,mean_acc,std_acc,replicates,status\n";
    for (const auto& row : summary.rows)
        for (const auto& cell : row.cells)
            out << to_string(row.group) << ',' << detail::csv_field(row.config) << ',' << detail::csv_field(cell.model)
                << ',' << fixed(cell.mean_acc, 4) << ',' << fixed(cell.std_acc, 4) << ',' << cell.replicates << ','
                << detail::csv_field(cell.status) << '\n';
}

Summary read_summary_csv(std::istream& in, std::string_view source) {
    const auto fail = [&](std::size_t line, const std::string& what) -> void {
        throw FormatError(std::string(source) + ": row " + std::to_string(line) + ": " + what);
    };
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(in, line)) fail(1, "missing header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "group,config,model,mean_acc,std_acc,replicates,status") fail(1, "unexpected header \"" + line + "\"");

    Summary s;
    std::vector<std::string> fields;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (!detail::split_csv_line(line, fields)) fail(line_no, "unterminated quote");
        if (fields.size() != 7) fail(line_no, "expected 7 fields, found " + std::to_string(fields.size()));
        Group group{};
        SummaryCell cell;
        try {
            group = parse_group(fields[0]);
            cell.model = fields[2];
            cell.mean_acc = parse_double(fields[3], "mean_acc");
            cell.std_acc = parse_double(fields[4], "std_acc");
            cell.replicates = parse_u64(fields[5], "replicates");
        } catch (const Error& e) {
            fail(line_no, e.what());
        }
        cell.status = fields[6];
        if (std::find(s.models.begin(), s.models.end(), cell.model) == s.models.end()) s.models.push_back(cell.model);
        if (s.rows.empty() || s.rows.back().group != group || s.rows.back().config != fields[1])
            s.rows.push_back(SummaryRow{group, fields[1], {}});
        s.rows.back().cells.push_back(std::move(cell));
    }
    if (s.rows.empty()) fail(line_no, "no data rows");
    return s;
}

std::string render_markdown(const Summary& summary) {
    std::ostringstream out;
    out << "| Group | Features |";
    for (const auto& m : summary.models) out << ' ' << m << " |";
    out << "\n|---|---|";
    for (std::size_t i = 0; i < summary.models.size(); ++i) out << "---|";
    out << '\n';

    // Rank 0 = best, 1 = runner-up, per model column.
    std::vector<std::vector<int>> rank(summary.rows.size(), std::vector<int>(summary.models.size(), -1));
    for (std::size_t m = 0; m < summary.models.size(); ++m) {
        std::vector<std::pair<double, std::size_t>> scores;
        for (std::size_t r = 0; r < summary.rows.size(); ++r)
            for (const auto& cell : summary.rows[r].cells)
                if (cell.model == summary.models[m] && cell.ok()) scores.emplace_back(cell.mean_acc, r);
        std::stable_sort(scores.begin(), scores.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
        for (std::size_t k = 0; k < std::min<std::size_t>(2, scores.size()); ++k)
            rank[scores[k].second][m] = static_cast<int>(k);
    }

    std::optional<Group> previous;
    for (std::size_t r = 0; r < summary.rows.size(); ++r) {
        const auto& row = summary.rows[r];
        out << "| " << (previous == row.group ? "" : std::string(to_string(row.group))) << " | " << row.config << " |";
        previous = row.group;
        for (std::size_t m = 0; m < summary.models.size(); ++m) {
            const SummaryCell* cell = nullptr;
            for (const auto& c : row.cells)
                if (c.model == summary.models[m]) cell = &c;
            std::string text;
            if (cell == nullptr) text = "";
            else if (!cell->ok()) text = "—(error)";
            else {
                text = format_cell(cell->mean_acc, cell->std_acc);
                if (rank[r][m] == 0) text = "**" + text + "**";
                else if (rank[r][m] == 1) text = "<u>" + text + "</u>";
            }
            out << ' ' << text << " |";
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace covexplain::ablate

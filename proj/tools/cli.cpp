#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "covexplain/ablate.hpp"
#include "covexplain/checkpoint.hpp"
#include "covexplain/classifier.hpp"
#include "covexplain/corpus.hpp"
#include "covexplain/embed.hpp"
#include "covexplain/error.hpp"
#include "covexplain/explain.hpp"
#include "covexplain/synth.hpp"

namespace covexplain::cli {

namespace fs = std::filesystem;
using corpus::StanceLabel;

namespace {

constexpr std::string_view kAllFeatures = "tweet,description,state,race,race_pic,gender";

struct Options {
    std::string corpus;
    std::string emb;
    std::string schema;
    std::string out;
    std::string features = std::string(kAllFeatures);
    std::string models;
    std::string config;
    std::string checkpoint;
    std::string split;
    std::string target;
    std::string unit = "token";
    std::string preset = "planted";
    std::string predictions;
    std::vector<std::string> inputs;
    std::size_t k = 10;
    std::size_t replicates = 20;
    std::size_t mc_samples = 0;
    std::size_t permutations = 2000;
    std::size_t n = 0;
    std::size_t dim = 1024;
    std::size_t hidden = model::kDefaultHidden;
    std::size_t epochs = 80;
    std::size_t batch_size = 256;
    std::size_t threads = 0;
    std::size_t top = 10;
    std::uint64_t seed = 0;
    double lr = 1e-2;
    double dropout = 0.2;
    double ridge = baselines::kDefaultRidge;
    double svm_c = 1.0;
    double svm_gamma = 0.0;
    double text_signal = 0.0;
    double desc_signal = 0.0;
    double state_signal = 0.0;
    bool balance_first = false;
    bool verbose = false;
};

struct Context {
    Options opt;
    CLI::App* sub = nullptr;
    std::ostream& out;
    std::ostream& err;

    bool given(const std::string& flag) const { return sub != nullptr && sub->count(flag) > 0; }
};

void require_file(const std::string& path, std::string_view what) {
    if (path.empty()) throw InvalidArgument(std::string(what) + " path is empty");
    if (!fs::exists(path)) throw Error(std::string(what) + " \"" + path + "\" does not exist");
}

std::vector<std::string> split_list(std::string_view text) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto comma = text.find(',', pos);
        out.emplace_back(text.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
        if (comma == std::string_view::npos) break;
        pos = comma + 1;
    }
    return out;
}

std::string fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return buf;
}

fs::path sibling(const fs::path& path, std::string_view extension) {
    fs::path p = path;
    p.replace_extension(extension);
    return p;
}

std::ofstream open_output(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    return out;
}

corpus::CategoricalSchema read_schema_file(const std::string& path) {
    require_file(path, "schema");
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return corpus::CategoricalSchema::from_json(ss.str());
}

corpus::Corpus load_corpus(const Options& opt) {
    require_file(opt.corpus, "corpus");
    if (!opt.schema.empty())
        return corpus::ingest_records(opt.corpus, corpus::SchemaMode::Given, read_schema_file(opt.schema));
    return corpus::ingest_records(opt.corpus, corpus::SchemaMode::Infer);
}

struct Embeddings {
    std::optional<embed::EmbeddingMatrix> tweets;
    std::optional<embed::EmbeddingMatrix> descriptions;

    const embed::EmbeddingMatrix* tweet_ptr() const { return tweets ? &*tweets : nullptr; }
    const embed::EmbeddingMatrix* description_ptr() const { return descriptions ? &*descriptions : nullptr; }
};

Embeddings load_embeddings(const std::string& list) {
    Embeddings e;
    if (list.empty()) return e;
    const auto paths = split_list(list);
    if (paths.size() > 2) throw InvalidArgument("--emb takes at most two paths: tweet,description");
    if (!paths[0].empty()) {
        require_file(paths[0], "tweet embeddings");
        e.tweets = embed::read_embeddings(fs::path(paths[0]));
    }
    if (paths.size() > 1 && !paths[1].empty()) {
        require_file(paths[1], "description embeddings");
        e.descriptions = embed::read_embeddings(fs::path(paths[1]));
    }
    return e;
}

ClassifierOptions classifier_options(const Options& opt) {
    ClassifierOptions c;
    c.mlp.learning_rate = opt.lr;
    c.mlp.epochs = opt.epochs;
    c.mlp.batch_size = opt.batch_size;
    c.mlp.hidden_dim = opt.hidden;
    c.mlp.dropout_p = opt.dropout;
    c.ridge_lambda = opt.ridge;
    c.svm.c = opt.svm_c;
    c.svm.gamma = opt.svm_gamma;
    return c;
}

// Working set shared by train, eval and explain: the (optionally balanced)
// corpus and its chronological slices.
struct Prepared {
    corpus::Corpus data;
    corpus::TimeSlices slices;
};

Prepared prepare_split(corpus::Corpus data, const Options& opt, std::size_t k, bool balance_first,
                       std::uint64_t seed) {
    Prepared p;
    p.data = balance_first ? corpus::balance_sample(data, seed) : std::move(data);
    if (!opt.split.empty()) {
        require_file(opt.split, "split manifest");
        std::ifstream in(opt.split);
        p.slices = corpus::read_split_manifest(in, p.data);
    } else {
        p.slices = corpus::chronological_split(p.data, k);
    }
    return p;
}

std::string csv_quote(std::string_view s) {
    if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (const char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string layout_string(const embed::Layout& layout) {
    std::string s;
    for (const auto& seg : layout) {
        if (!s.empty()) s += ';';
        s += seg.name + ":" + std::to_string(seg.offset) + ":" + std::to_string(seg.length);
    }
    return s;
}

void add_usage_flags(CLI::App* sub, Options& o) { sub->add_option("--config", o.config, "key=value file merged beneath flags"); }

void add_corpus_flags(CLI::App* sub, Options& o, bool required) {
    auto* c = sub->add_option("--corpus", o.corpus, "JSON-Lines corpus");
    if (required) c->required();
    sub->add_option("--schema", o.schema, "categorical schema JSON (default: inferred)");
}

void add_train_flags(CLI::App* sub, Options& o) {
    sub->add_option("--hidden", o.hidden, "hidden width of the MLP");
    sub->add_option("--epochs", o.epochs, "training epochs");
    sub->add_option("--batch-size", o.batch_size, "minibatch size");
    sub->add_option("--lr", o.lr, "learning rate");
    sub->add_option("--dropout", o.dropout, "dropout probability");
    sub->add_option("--ridge", o.ridge, "ridge penalty of the linear baseline");
    sub->add_option("--svm-c", o.svm_c, "SVM box constraint");
    sub->add_option("--svm-gamma", o.svm_gamma, "RBF width (0: 1/feature count)");
}

void add_split_flags(CLI::App* sub, Options& o) {
    sub->add_option("--k", o.k, "number of chronological slices");
    sub->add_option("--split", o.split, "split manifest to use instead of --k");
    sub->add_flag("--balance-first", o.balance_first, "balance the whole corpus before splitting");
}

// ---- subcommands ---------------------------------------------------------

int cmd_synth(Context& ctx) {
    const auto& o = ctx.opt;
    synth::SignalSpec spec;
    if (o.preset == "planted") {
        spec = synth::planted_fusion_spec();
    } else if (o.preset != "none") {
        throw InvalidArgument("unknown preset \"" + o.preset + "\" (expected planted or none)");
    }
    if (ctx.given("--n")) spec.n_records = o.n;
    if (ctx.given("--seed")) spec.seed = o.seed;
    if (ctx.given("--text-signal")) spec.text_signal_strength = o.text_signal;
    if (ctx.given("--desc-signal")) spec.desc_signal_strength = o.desc_signal;
    if (ctx.given("--state-signal")) {
        if (o.state_signal > 0.0)
            spec.offline_signal[std::string(corpus::kState)] =
                synth::CategoricalSignal{{{"WY", 1.0}}, {{"VT", 1.0}}, o.state_signal};
        else
            spec.offline_signal.erase(std::string(corpus::kState));
    }
    if (ctx.given("--unpaired")) spec.paired = false;
    const auto data = synth::generate(spec);
    corpus::write_records(fs::path(o.out), data.posts);
    if (!o.schema.empty()) {
        auto f = open_output(o.schema);
        f << data.schema.to_json() << '\n';
    }
    ctx.out << "synth: wrote " << data.posts.size() << " records (" << data.count(StanceLabel::Anti) << " anti, "
            << data.count(StanceLabel::Pro) << " pro) to " << o.out << '\n';
    return kExitOk;
}

int cmd_ingest(Context& ctx) {
    const auto data = load_corpus(ctx.opt);
    if (!ctx.opt.out.empty()) {
        auto f = open_output(ctx.opt.out);
        f << data.schema.to_json() << '\n';
    }
    ctx.out << "ingest: " << data.posts.size() << " records (" << data.count(StanceLabel::Anti) << " anti, "
            << data.count(StanceLabel::Pro) << " pro), " << data.schema.features().size() << " offline features";
    if (!ctx.opt.out.empty()) ctx.out << "; schema written to " << ctx.opt.out;
    ctx.out << '\n';
    return kExitOk;
}

int cmd_embed(Context& ctx) {
    const auto& o = ctx.opt;
    const auto data = load_corpus(o);
    const auto paths = split_list(o.emb);
    if (paths.size() > 2) throw InvalidArgument("--emb takes at most two paths: tweet,description");
    std::size_t written = 0;
    const embed::TextField fields[] = {embed::TextField::Tweet, embed::TextField::Description};
    for (std::size_t i = 0; i < paths.size(); ++i) {
        if (paths[i].empty()) continue;
        const auto m = embed::embed_corpus(data, fields[i], o.dim, o.seed);
        const fs::path p(paths[i]);
        if (p.has_parent_path()) fs::create_directories(p.parent_path());
        embed::write_embeddings(m, p);
        ++written;
    }
    if (written == 0) throw InvalidArgument("--emb names no output files");
    ctx.out << "embed: " << data.posts.size() << " records x " << o.dim << " dims -> " << o.emb << '\n';
    return kExitOk;
}

int cmd_split(Context& ctx) {
    const auto& o = ctx.opt;
    auto prepared = prepare_split(load_corpus(o), Options{}, o.k, o.balance_first, o.seed);
    auto f = open_output(o.out);
    corpus::write_split_manifest(f, prepared.data, prepared.slices);
    ctx.out << "split: " << prepared.data.posts.size() << " records into " << prepared.slices.k << " slices; test slice "
            << prepared.slices.test_indices().size() << " records from timestamp " << prepared.slices.boundaries[prepared.slices.k - 1]
            << " -> " << o.out << '\n';
    return kExitOk;
}

int cmd_train(Context& ctx) {
    const auto& o = ctx.opt;
    const auto kinds = parse_model_list(o.models.empty() ? "covexplain" : o.models);
    if (kinds.size() != 1) throw InvalidArgument("train takes exactly one model");
    const auto selection = embed::FeatureSelection::parse(o.features);
    if (selection.empty()) throw InvalidArgument("no features selected");

    auto data = load_corpus(o);
    if (data.count(StanceLabel::Anti) == 0 || data.count(StanceLabel::Pro) == 0)
        throw InvalidArgument("single-class data: the corpus needs both anti and pro records");
    auto prepared = prepare_split(std::move(data), o, o.k, o.balance_first, o.seed);
    const auto emb = load_embeddings(o.emb);
    const auto train_rows = o.balance_first
                                ? prepared.slices.train_indices()
                                : corpus::balance_indices(prepared.data.posts, prepared.slices.train_indices(), o.seed);
    const auto ds = embed::build_dataset(prepared.data, train_rows, emb.tweet_ptr(), emb.description_ptr(), selection);

    auto clf = make_classifier(kinds[0], classifier_options(o));
    clf->fit(ds.features, ds.labels, o.seed);
    const double train_acc = accuracy(clf->predict(ds.features), ds.labels);

    checkpoint::Checkpoint ckpt;
    clf->save(ckpt);
    auto& c = ckpt.config;
    c["pipeline.features"] = selection.to_string(prepared.data.schema);
    c["pipeline.schema"] = prepared.data.schema.to_json(-1);
    c["pipeline.layout"] = layout_string(ds.layout);
    c["pipeline.k"] = std::to_string(prepared.slices.k);
    c["pipeline.seed"] = std::to_string(o.seed);
    c["pipeline.balance_first"] = o.balance_first ? "1" : "0";
    c["pipeline.train_records"] = std::to_string(train_rows.size());
    if (emb.tweets) {
        c["pipeline.tweet_tag"] = emb.tweets->source_tag();
        c["pipeline.tweet_dim"] = std::to_string(emb.tweets->dim());
    }
    if (emb.descriptions) {
        c["pipeline.description_tag"] = emb.descriptions->source_tag();
        c["pipeline.description_dim"] = std::to_string(emb.descriptions->dim());
    }
    const auto baseline = explain::segment_baseline(ds);
    ckpt.tensors.push_back(checkpoint::Tensor::from_f32("pipeline.segment_baseline",
                                                        {static_cast<std::uint64_t>(baseline.size())}, baseline));
    const fs::path out(o.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    checkpoint::write_checkpoint(ckpt, out);

    if (const auto* mlp = dynamic_cast<const MlpClassifier*>(clf.get()); mlp != nullptr && ctx.given("--history")) {
        auto f = open_output(sibling(out, ".history.csv"));
        f << "epoch,loss,accuracy\n";
        for (const auto& e : mlp->history()) f << e.epoch << ',' << fixed(e.loss, 6) << ',' << fixed(e.accuracy, 6) << '\n';
    }
    ctx.out << "train: " << clf->name() << " on " << c["pipeline.features"] << " (" << train_rows.size()
            << " records, train accuracy " << fixed(100.0 * train_acc, 2) << "%) -> " << o.out << '\n';
    return kExitOk;
}

struct LoadedModel {
    checkpoint::Checkpoint ckpt;
    std::unique_ptr<Classifier> clf;
    embed::FeatureSelection selection;
    corpus::CategoricalSchema schema;
};

LoadedModel load_model(const std::string& path) {
    require_file(path, "checkpoint");
    LoadedModel m;
    m.ckpt = checkpoint::read_checkpoint(fs::path(path));
    m.clf = load_classifier(m.ckpt);
    m.selection = embed::FeatureSelection::parse(m.ckpt.get("pipeline.features"));
    m.schema = corpus::CategoricalSchema::from_json(m.ckpt.get("pipeline.schema"));
    return m;
}

Prepared prepare_for_model(const Context& ctx, const LoadedModel& m) {
    const auto& o = ctx.opt;
    require_file(o.corpus, "corpus");
    auto data = corpus::ingest_records(o.corpus, corpus::SchemaMode::Given, m.schema);
    const std::size_t k = ctx.given("--k") ? o.k : parse_u64(m.ckpt.get("pipeline.k"), "pipeline.k");
    const bool balance_first = ctx.given("--balance-first") ? o.balance_first : m.ckpt.get("pipeline.balance_first") == "1";
    const std::uint64_t seed = ctx.given("--seed") ? o.seed : parse_u64(m.ckpt.get("pipeline.seed"), "pipeline.seed");
    return prepare_split(std::move(data), o, k, balance_first, seed);
}

void check_layout(const LoadedModel& m, const embed::Layout& layout) {
    if (layout_string(layout) != m.ckpt.get("pipeline.layout"))
        throw InvalidArgument("feature layout " + layout_string(layout) + " does not match the checkpoint's " +
                              m.ckpt.get("pipeline.layout") + " (check --emb)");
}

int cmd_eval(Context& ctx) {
    const auto& o = ctx.opt;
    const auto m = load_model(o.checkpoint);
    const auto prepared = prepare_for_model(ctx, m);
    const auto emb = load_embeddings(o.emb);
    const auto& test = prepared.slices.test_indices();
    const auto ds = embed::build_dataset(prepared.data, test, emb.tweet_ptr(), emb.description_ptr(), m.selection);
    check_layout(m, ds.layout);

    std::vector<StanceLabel> predicted;
    std::vector<model::Prediction> detail;
    double mean_std = 0.0;
    const auto* mlp = dynamic_cast<const MlpClassifier*>(m.clf.get());
    if (mlp != nullptr) {
        detail = model::predict(mlp->params(), ds.features, o.mc_samples, mlp->config().architecture(), o.seed);
        for (const auto& p : detail) {
            predicted.push_back(p.label);
            if (p.mc_std) mean_std += (*p.mc_std)[static_cast<std::size_t>(p.label)];
        }
        if (!detail.empty()) mean_std /= static_cast<double>(detail.size());
    } else {
        if (o.mc_samples > 0) throw InvalidArgument("--mc-samples applies only to the covexplain model");
        predicted = m.clf->predict(ds.features);
    }
    const double acc = accuracy(predicted, ds.labels);
    std::size_t class_total[2] = {0, 0};
    std::size_t class_hit[2] = {0, 0};
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const auto y = static_cast<std::size_t>(ds.labels[i]);
        ++class_total[y];
        if (predicted[i] == ds.labels[i]) ++class_hit[y];
    }
    const auto recall = [&](std::size_t c) {
        return class_total[c] ? static_cast<double>(class_hit[c]) / static_cast<double>(class_total[c]) : 0.0;
    };

    auto f = open_output(o.out);
    f << "model,features,records,accuracy,anti_recall,pro_recall,mc_samples,mean_mc_std\n";
    f << m.clf->name() << ',' << csv_quote(m.ckpt.get("pipeline.features")) << ',' << predicted.size() << ','
      << fixed(acc, 6) << ',' << fixed(recall(0), 6) << ',' << fixed(recall(1), 6) << ',' << o.mc_samples << ','
      << fixed(mean_std, 6) << '\n';
    if (!o.predictions.empty()) {
        auto p = open_output(o.predictions);
        p << "id,label,predicted" << (detail.empty() ? "" : ",p_anti,p_pro") << '\n';
        for (std::size_t i = 0; i < predicted.size(); ++i) {
            p << prepared.data.posts[test[i]].id << ',' << corpus::to_string(ds.labels[i]) << ','
              << corpus::to_string(predicted[i]);
            if (!detail.empty()) p << ',' << fixed(detail[i].probs[0], 6) << ',' << fixed(detail[i].probs[1], 6);
            p << '\n';
        }
    }
    ctx.out << "eval: " << m.clf->name() << " accuracy " << fixed(100.0 * acc, 2) << "% on " << predicted.size()
            << " test records -> " << o.out << '\n';
    return kExitOk;
}

int cmd_ablate(Context& ctx) {
    const auto& o = ctx.opt;
    auto prepared = prepare_split(load_corpus(o), o, o.k, false, o.seed);
    const auto emb = load_embeddings(o.emb);
    std::vector<std::string> online;
    if (emb.tweets) online.emplace_back(embed::kTweetSegment);
    if (emb.descriptions) online.emplace_back(embed::kDescriptionSegment);
    std::vector<std::string> offline;
    for (const auto& f : prepared.data.schema.features()) offline.push_back(f.name);
    std::vector<std::string> warnings;
    const auto configs = ablate::enumerate_feature_sets(offline, online, &warnings);
    for (const auto& w : warnings) ctx.err << "warning: " << w << '\n';

    const auto kinds = parse_model_list(o.models.empty() ? "all" : o.models);
    const auto models = ablate::model_entries(kinds, classifier_options(o));
    ablate::RunOptions run;
    run.replicates = o.replicates;
    run.base_seed = o.seed;
    run.threads = o.threads;
    if (o.verbose) run.progress = [&ctx](std::string_view line) { ctx.err << line << '\n'; };
    const auto report = ablate::run_matrix(prepared.data, emb.tweet_ptr(), emb.description_ptr(), prepared.slices,
                                           configs, models, run);
    const auto summary = ablate::summarize(report);
    {
        auto f = open_output(o.out);
        ablate::write_summary_csv(f, summary);
    }
    {
        auto f = open_output(sibling(o.out, ".md"));
        f << ablate::render_markdown(summary);
    }
    std::size_t failed = 0;
    for (const auto& row : summary.rows)
        for (const auto& cell : row.cells) failed += cell.ok() ? 0 : 1;
    ctx.out << "ablate: " << configs.size() << " feature sets x " << models.size() << " models x " << o.replicates
            << " replicates (" << failed << " failed cells) -> " << o.out << '\n';
    return kExitOk;
}

int cmd_explain(Context& ctx) {
    const auto& o = ctx.opt;
    const auto m = load_model(o.checkpoint);
    const auto* mlp = dynamic_cast<const MlpClassifier*>(m.clf.get());
    if (mlp == nullptr) throw InvalidArgument("explanations need a covexplain checkpoint");
    const auto prepared = prepare_for_model(ctx, m);
    const auto emb = load_embeddings(o.emb);

    std::size_t index = 0;
    if (o.target.empty()) {
        index = prepared.slices.test_indices().front();
    } else {
        const auto it = std::find_if(prepared.data.posts.begin(), prepared.data.posts.end(),
                                     [&](const corpus::RawPost& p) { return p.id == o.target; });
        if (it == prepared.data.posts.end()) throw InvalidArgument("no record with id \"" + o.target + "\"");
        index = static_cast<std::size_t>(it - prepared.data.posts.begin());
    }
    const auto& post = prepared.data.posts[index];
    const auto probs = explain::mlp_probabilities(mlp->params(), mlp->config().architecture());

    explain::Attribution attribution;
    if (o.unit == "token") {
        const auto tag = m.ckpt.get_or("pipeline.tweet_tag", "");
        const auto dim = parse_u64(m.ckpt.get_or("pipeline.tweet_dim", "0"), "pipeline.tweet_dim");
        const auto hashing = embed::parse_hashing_tag(tag, dim);
        if (!hashing) throw InvalidArgument("token explanations need hashing tweet embeddings (tag \"" + tag + "\")");
        std::optional<std::span<const float>> desc;
        if (m.selection.description) {
            if (!emb.descriptions) throw InvalidArgument("the checkpoint uses description features; pass --emb");
            desc = emb.descriptions->find(post.id);
            if (!desc) throw InvalidArgument("no description embedding for record " + post.id);
        }
        const auto embedder = explain::hashing_token_embedder(post, prepared.data.schema, m.selection, *hashing, desc);
        attribution = explain::explain_tokens(probs, post, embedder, o.permutations, o.seed);
    } else if (o.unit == "group") {
        const std::vector<std::size_t> one{index};
        const auto ds = embed::build_dataset(prepared.data, one, emb.tweet_ptr(), emb.description_ptr(), m.selection);
        check_layout(m, ds.layout);
        const auto& base = m.ckpt.tensor("pipeline.segment_baseline");
        std::vector<float> fused(ds.features.data(), ds.features.data() + ds.features.cols());
        attribution = explain::explain_feature_groups(probs, fused, ds.layout, base.f32, std::nullopt, post.id);
    } else {
        throw InvalidArgument("unknown --unit \"" + o.unit + "\" (expected token or group)");
    }

    {
        auto f = open_output(o.out);
        explain::write_attribution_csv(f, attribution);
    }
    {
        auto f = open_output(sibling(o.out, ".html"));
        explain::write_attribution_html(f, attribution);
    }
    ctx.out << "explain: " << post.id << " (" << corpus::to_string(attribution.target_class) << ", "
            << attribution.values.size() << " players, efficiency gap " << attribution.efficiency_gap() << ") -> "
            << o.out << '\n';
    return kExitOk;
}

struct TokenStats {
    double toward_pro = 0.0;
    std::size_t count = 0;
};

int cmd_report(Context& ctx) {
    const auto& o = ctx.opt;
    std::vector<ablate::Summary> summaries;
    std::map<std::string, std::map<std::string, TokenStats>> by_unit;
    std::map<std::string, std::size_t> files_per_unit;
    std::size_t attribution_files = 0;
    for (const auto& path : o.inputs) {
        require_file(path, "report input");
        std::ifstream in(path);
        std::string first;
        std::getline(in, first);
        if (first.rfind("group,config,", 0) == 0) {
            in.clear();
            in.seekg(0);
            summaries.push_back(ablate::read_summary_csv(in, path));
        } else if (first.rfind("# target=", 0) == 0) {
            ++attribution_files;
            const bool pro = first.find(",class=pro") != std::string::npos;
            const std::string unit = first.find(",unit=group") != std::string::npos ? "group" : "token";
            ++files_per_unit[unit];
            auto& tokens = by_unit[unit];
            std::string line;
            std::size_t row = 1;
            std::getline(in, line);
            ++row;
            if (line.rfind("rank,name,phi", 0) != 0) throw FormatError(path + ": row 2: expected rank,name,phi header");
            while (std::getline(in, line)) {
                ++row;
                if (line.empty()) continue;
                std::vector<std::string> fields;
                const auto last = line.rfind(',');
                const auto firstc = line.find(',');
                if (last == std::string::npos || firstc == last)
                    throw FormatError(path + ": row " + std::to_string(row) + ": expected rank,name,phi");
                std::string name = line.substr(firstc + 1, last - firstc - 1);
                if (name.size() >= 2 && name.front() == '"' && name.back() == '"') name = name.substr(1, name.size() - 2);
                double phi = 0.0;
                try {
                    phi = parse_double(line.substr(last + 1), "phi");
                } catch (const Error& e) {
                    throw FormatError(path + ": row " + std::to_string(row) + ": " + e.what());
                }
                auto& s = tokens[name];
                s.toward_pro += pro ? phi : -phi;
                ++s.count;
            }
        } else {
            throw FormatError(path + ": row 1: not an ablation summary or attribution CSV");
        }
    }
    if (summaries.empty() && attribution_files == 0) throw InvalidArgument("report needs at least one input CSV");

    std::ostringstream md;
    md << "# CovExplain report\n\n";
    for (std::size_t i = 0; i < summaries.size(); ++i) {
        md << "## Accuracy (mean ± std over replicates)\n\n" << ablate::render_markdown(summaries[i]) << '\n';
    }
    if (attribution_files == 0) {
        md << "## Attributions\n\n_No attribution files were supplied; explanation section omitted._\n";
    }
    for (const auto& [unit, tokens] : by_unit) {
        const bool group = unit == "group";
        md << (group ? "## Feature-group attributions\n\n" : "## Token attributions\n\n");
        std::vector<std::pair<std::string, double>> ranked;
        for (const auto& [name, s] : tokens) ranked.emplace_back(name, s.toward_pro / static_cast<double>(s.count));
        for (const auto cls : {StanceLabel::Anti, StanceLabel::Pro}) {
            const double sign = cls == StanceLabel::Pro ? 1.0 : -1.0;
            auto sorted = ranked;
            std::stable_sort(sorted.begin(), sorted.end(),
                             [&](const auto& a, const auto& b) { return a.second * sign > b.second * sign; });
            md << "### Top " << (group ? "groups" : "tokens") << " toward " << corpus::to_string(cls) << " ("
               << files_per_unit.at(unit) << " explanations)\n\n";
            md << "| Rank | " << (group ? "Group" : "Token") << " | Mean φ |\n|---|---|---|\n";
            std::size_t rank = 0;
            for (const auto& [name, v] : sorted) {
                if (rank >= o.top || v * sign <= 0.0) break;
                md << "| " << ++rank << " | " << name << " | " << fixed(v * sign, 4) << " |\n";
            }
            md << '\n';
        }
    }
    if (o.out.empty()) {
        ctx.out << md.str();
    } else {
        auto f = open_output(o.out);
        f << md.str();
        ctx.out << "report: " << summaries.size() << " summaries, " << attribution_files << " attributions -> " << o.out
                << '\n';
    }
    return kExitOk;
}

// Appends "--key=value" for every config-file entry whose flag is absent.
std::vector<std::string> merge_config(std::vector<std::string> args) {
    std::string path;
    for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
    }
    if (path.empty()) return args;
    std::ifstream in(path);
    if (!in) throw CLI::ValidationError("--config", "cannot read config file " + path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto start = line.find_first_not_of(" \t");
        if (start == std::string::npos || line[start] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw CLI::ValidationError("--config", path + ":" + std::to_string(line_no) + ": expected key=value");
        auto key = line.substr(start, eq - start);
        while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
        auto value = line.substr(eq + 1);
        const auto vs = value.find_first_not_of(" \t");
        value = vs == std::string::npos ? "" : value.substr(vs);
        if (key.rfind("--", 0) == 0) key = key.substr(2);
        const std::string flag = "--" + key;
        const bool present = std::any_of(args.begin() + 1, args.end(), [&](const std::string& a) {
            return a == flag || a.rfind(flag + "=", 0) == 0;
        });
        if (!present) args.push_back(flag + "=" + value);
    }
    return args;
}

}  // namespace

int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
    if (args.empty()) args.emplace_back("covexplain");
    CLI::App app{"Online/offline stance classification with Shapley explanations", "covexplain"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "covexplain 0.1.0");
    Context ctx{Options{}, nullptr, out, err};
    Options& o = ctx.opt;

    auto* synth = app.add_subcommand("synth", "generate a synthetic labeled corpus");
    synth->add_option("--out", o.out, "output JSON-Lines path")->required();
    synth->add_option("--schema", o.schema, "also write the generator's schema JSON here");
    synth->add_option("--preset", o.preset, "planted (default) or none");
    synth->add_option("--n", o.n, "number of records");
    synth->add_option("--seed", o.seed, "generator seed");
    synth->add_option("--text-signal", o.text_signal, "share of records with a class token in the tweet");
    synth->add_option("--desc-signal", o.desc_signal, "share of records with a class token in the description");
    synth->add_option("--state-signal", o.state_signal, "share of records whose state reveals the class");
    synth->add_flag("--unpaired", "draw records independently instead of as twins");
    add_usage_flags(synth, o);

    auto* ingest = app.add_subcommand("ingest", "validate a corpus and write its schema");
    add_corpus_flags(ingest, o, true);
    ingest->add_option("--out", o.out, "schema JSON output");
    add_usage_flags(ingest, o);

    auto* embed_cmd = app.add_subcommand("embed", "hash tweets and descriptions into CVXE files");
    add_corpus_flags(embed_cmd, o, true);
    embed_cmd->add_option("--emb", o.emb, "output paths: tweet.cvxe,description.cvxe")->required();
    embed_cmd->add_option("--dim", o.dim, "embedding dimension");
    embed_cmd->add_option("--seed", o.seed, "hashing seed");
    add_usage_flags(embed_cmd, o);

    auto* split = app.add_subcommand("split", "write the chronological split manifest");
    add_corpus_flags(split, o, true);
    split->add_option("--k", o.k, "number of slices");
    split->add_option("--seed", o.seed, "balancing seed (with --balance-first)");
    split->add_flag("--balance-first", o.balance_first, "balance the corpus before splitting");
    split->add_option("--out", o.out, "manifest CSV")->required();
    add_usage_flags(split, o);

    auto* train = app.add_subcommand("train", "train one model on the training slices");
    add_corpus_flags(train, o, true);
    train->add_option("--emb", o.emb, "tweet.cvxe,description.cvxe");
    train->add_option("--features", o.features, "comma-separated feature selection");
    train->add_option("--models", o.models, "model: covexplain, linear, gnb or svm");
    train->add_option("--seed", o.seed, "seed for balancing and training");
    train->add_option("--out", o.out, "checkpoint path")->required();
    train->add_flag("--history", "also write <out>.history.csv with per-epoch metrics");
    add_split_flags(train, o);
    add_train_flags(train, o);
    add_usage_flags(train, o);

    auto* eval = app.add_subcommand("eval", "score a checkpoint on the test slice");
    add_corpus_flags(eval, o, true);
    eval->add_option("--emb", o.emb, "tweet.cvxe,description.cvxe");
    eval->add_option("--checkpoint", o.checkpoint, "model checkpoint")->required();
    eval->add_option("--mc-samples", o.mc_samples, "Monte-Carlo dropout passes (0: deterministic)");
    eval->add_option("--seed", o.seed, "seed for Monte-Carlo dropout");
    eval->add_option("--out", o.out, "metrics CSV")->required();
    eval->add_option("--predictions", o.predictions, "optional per-record predictions CSV");
    add_split_flags(eval, o);
    add_usage_flags(eval, o);

    auto* abl = app.add_subcommand("ablate", "run the feature-set x model grid");
    add_corpus_flags(abl, o, true);
    abl->add_option("--emb", o.emb, "tweet.cvxe,description.cvxe");
    abl->add_option("--models", o.models, "all or a comma-separated list");
    abl->add_option("--replicates", o.replicates, "balanced resamples per cell");
    abl->add_option("--seed", o.seed, "base seed");
    abl->add_option("--k", o.k, "number of chronological slices");
    abl->add_option("--split", o.split, "split manifest to use instead of --k");
    abl->add_option("--threads", o.threads, "worker threads (COVEXPLAIN_THREADS caps)");
    abl->add_option("--out", o.out, "summary CSV (markdown goes next to it)")->required();
    abl->add_flag("--verbose", o.verbose, "print per-cell progress to stderr");
    add_train_flags(abl, o);
    add_usage_flags(abl, o);

    auto* expl = app.add_subcommand("explain", "Shapley attribution for one record");
    add_corpus_flags(expl, o, true);
    expl->add_option("--emb", o.emb, "tweet.cvxe,description.cvxe");
    expl->add_option("--checkpoint", o.checkpoint, "covexplain checkpoint")->required();
    expl->add_option("--target", o.target, "record id (default: first test record)");
    expl->add_option("--unit", o.unit, "token or group");
    expl->add_option("--permutations", o.permutations, "sampled permutations for token attributions");
    expl->add_option("--seed", o.seed, "sampling seed");
    expl->add_option("--out", o.out, "attribution CSV (HTML goes next to it)")->required();
    add_split_flags(expl, o);
    add_usage_flags(expl, o);

    auto* report = app.add_subcommand("report", "render summary and attribution CSVs as markdown");
    report->add_option("inputs", o.inputs, "ablation summary and attribution CSVs")->required();
    report->add_option("--out", o.out, "markdown output (default: stdout)");
    report->add_option("--top", o.top, "tokens per class");
    add_usage_flags(report, o);

    try {
        args = merge_config(std::move(args));
        std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
        app.parse(std::move(reversed));
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        if (code == 0) return kExitOk;
        err << app.help();
        return kExitUsage;
    }

    const std::map<CLI::App*, int (*)(Context&)> handlers = {
        {synth, cmd_synth}, {ingest, cmd_ingest}, {embed_cmd, cmd_embed}, {split, cmd_split},
        {train, cmd_train}, {eval, cmd_eval},     {abl, cmd_ablate},      {expl, cmd_explain},
        {report, cmd_report}};
    for (const auto& [sub, handler] : handlers) {
        if (!sub->parsed()) continue;
        ctx.sub = sub;
        try {
            return handler(ctx);
        } catch (const std::exception& e) {
            err << "error: " << e.what() << '\n';
            return kExitData;
        }
    }
    err << app.help();
    return kExitUsage;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    return run(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace covexplain::cli

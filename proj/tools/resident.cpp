// resident: byte-level identification of similar languages.
// Subcommands: train, predict, evaluate, clean, gradcheck.
// Exit codes: 0 success, 1 runtime/data error, 2 usage error.
// Diagnostics go to stderr; only data goes to stdout.

#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "resident/resident.hpp"

namespace {

using namespace resident;

struct ArchFlags {
    int blocks = 0, emb_dim = 0, filters = 0, window1 = 0, window2 = 0, pool = 0;
    int gru_hidden = 0, max_len = 0;
    double block_dropout = -1.0, gru_dropout = -1.0;
    std::string merge;
};

struct TrainFlags {
    int batch_size = 0, epochs = 0, patience = -1;
    std::uint64_t seed = 0;
    bool no_shuffle = false;
    double lr = -1.0;
};

ModelConfig preset_config(const std::string& name) {
    ModelConfig cfg;  // defaults already carry d_b 64, filters 64, windows 8/4,
                      // pool 2, concat, dropout 0.5/0.1, hidden 100, max_len 384
    if (name == "run1")
        cfg.n_blocks = 5;
    else if (name == "run2")
        cfg.n_blocks = 4;
    else if (name == "run3")
        cfg.n_blocks = 3;
    else
        throw UsageError("unknown preset '" + name + "' (expected run1, run2 or run3)");
    return cfg;
}

void apply_config_file(const std::string& path, ModelConfig& mc, TrainConfig& tc,
                       AdamState& adam) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error("bad config file '" + path + "': " + e.what());
    }
    if (j.contains("n_blocks")) mc.n_blocks = j["n_blocks"].get<int>();
    if (j.contains("d_b")) mc.d_b = j["d_b"].get<int>();
    if (j.contains("conv_filters")) mc.conv_filters = j["conv_filters"].get<int>();
    if (j.contains("windows")) {
        mc.window1 = j["windows"].at(0).get<int>();
        mc.window2 = j["windows"].at(1).get<int>();
    }
    if (j.contains("pool")) mc.pool = j["pool"].get<int>();
    if (j.contains("merge_mode")) mc.merge = merge_mode_from(j["merge_mode"].get<std::string>());
    if (j.contains("block_dropout")) mc.block_dropout = j["block_dropout"].get<double>();
    if (j.contains("gru_hidden")) mc.gru_hidden = j["gru_hidden"].get<int>();
    if (j.contains("gru_dropout")) mc.gru_dropout = j["gru_dropout"].get<double>();
    if (j.contains("max_len")) mc.max_len = j["max_len"].get<int>();
    if (j.contains("batch_size")) tc.batch_size = j["batch_size"].get<int>();
    if (j.contains("max_epochs")) tc.max_epochs = j["max_epochs"].get<int>();
    if (j.contains("patience")) tc.patience = j["patience"].get<int>();
    if (j.contains("seed")) tc.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("shuffle")) tc.shuffle = j["shuffle"].get<bool>();
    if (j.contains("lr")) adam.lr = j["lr"].get<double>();
}

// read sentences one per line, tolerate CRLF
std::vector<std::string> read_lines(std::istream& in) {
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

// batched argmax predictions for raw sentences, order preserved
std::vector<std::int32_t> predict_indices(Model& model, const std::vector<std::string>& lines,
                                          Tensor* probs_out = nullptr) {
    const std::size_t max_len = static_cast<std::size_t>(model.config.max_len);
    const std::size_t k = model.labels.size();
    std::vector<std::int32_t> preds(lines.size());
    if (probs_out) *probs_out = Tensor(Shape{lines.size(), k});
    const std::size_t chunk = 256;
    for (std::size_t start = 0; start < lines.size(); start += chunk) {
        const std::size_t n = std::min(chunk, lines.size() - start);
        ByteBatch batch{n, max_len, {}};
        batch.ids.reserve(n * max_len);
        for (std::size_t r = 0; r < n; ++r) {
            const auto ids = encode_bytes(lines[start + r], max_len);
            batch.ids.insert(batch.ids.end(), ids.begin(), ids.end());
        }
        const Tensor probs = predict_probs(model, batch);
        for (std::size_t r = 0; r < n; ++r) {
            const double* row = &probs.data[r * k];
            std::size_t arg = 0;
            for (std::size_t c = 1; c < k; ++c)
                if (row[c] > row[arg]) arg = c;
            preds[start + r] = static_cast<std::int32_t>(arg);
            if (probs_out)
                std::copy_n(row, k, &probs_out->data[(start + r) * k]);
        }
    }
    return preds;
}

// option storage must outlive parsing, so each subcommand keeps its flags in
// a shared state object captured by value
struct TrainState {
    std::string train_path, dev_path, out_path, metrics_path, config_path, preset;
    ArchFlags af;
    TrainFlags tf;
    std::vector<CLI::Option*> arch_opts;
    CLI::Option *o_blocks, *o_emb, *o_filters, *o_w1, *o_w2, *o_pool, *o_merge, *o_bdrop,
        *o_hidden, *o_gdrop, *o_maxlen, *o_batch, *o_epochs, *o_patience, *o_seed, *o_lr;
};

int cmd_train(CLI::App& app) {
    auto s = std::make_shared<TrainState>();

    app.add_option("--train", s->train_path, "training TSV (sentence<TAB>label)")->required();
    app.add_option("--dev", s->dev_path, "validation TSV; default: 10% held out of --train");
    app.add_option("--out", s->out_path, "output model file (.rsid)")->required();
    app.add_option("--metrics", s->metrics_path,
                   "per-epoch metrics JSONL (default <out>.metrics.jsonl)");
    app.add_option("--config", s->config_path,
                   "JSON config file (ModelConfig/TrainConfig field names)");
    app.add_option("--preset", s->preset, "run1|run2|run3 (5, 4 or 3 residual blocks)");
    s->o_blocks = app.add_option("--blocks", s->af.blocks, "residual block count");
    s->o_emb = app.add_option("--emb-dim", s->af.emb_dim, "byte embedding dimension");
    s->o_filters = app.add_option("--filters", s->af.filters, "convolution filters per layer");
    s->o_w1 = app.add_option("--window1", s->af.window1, "first convolution window");
    s->o_w2 = app.add_option("--window2", s->af.window2, "second convolution window");
    s->o_pool = app.add_option("--pool", s->af.pool, "max-pool size");
    s->o_merge = app.add_option("--merge", s->af.merge, "merge mode: concat|add");
    s->o_bdrop = app.add_option("--block-dropout", s->af.block_dropout, "dropout inside blocks");
    s->o_hidden = app.add_option("--gru-hidden", s->af.gru_hidden, "GRU hidden units");
    s->o_gdrop = app.add_option("--gru-dropout", s->af.gru_dropout, "GRU dropout");
    s->o_maxlen = app.add_option("--max-len", s->af.max_len, "sentence byte budget");
    s->o_batch = app.add_option("--batch-size", s->tf.batch_size, "examples per batch");
    s->o_epochs = app.add_option("--epochs", s->tf.epochs, "maximum epochs");
    s->o_patience = app.add_option("--patience", s->tf.patience, "early-stopping patience");
    s->o_seed = app.add_option("--seed", s->tf.seed, "random seed");
    s->o_lr = app.add_option("--lr", s->tf.lr, "Adam learning rate");
    app.add_flag("--no-shuffle", s->tf.no_shuffle, "keep epoch order fixed");
    s->arch_opts = {s->o_blocks, s->o_emb, s->o_filters, s->o_w1, s->o_w2, s->o_pool,
                    s->o_merge, s->o_bdrop, s->o_hidden, s->o_gdrop, s->o_maxlen};

    app.callback([s]() {
        if (!s->preset.empty())
            for (const CLI::Option* o : s->arch_opts)
                if (o->count() > 0)
                    throw UsageError("--preset conflicts with explicit architecture flag " +
                                     o->get_name());

        // precedence: defaults < preset < config file < explicit flags
        ModelConfig mc = s->preset.empty() ? ModelConfig{} : preset_config(s->preset);
        TrainConfig tc;
        AdamState adam;
        if (!s->config_path.empty()) apply_config_file(s->config_path, mc, tc, adam);
        if (s->o_blocks->count()) mc.n_blocks = s->af.blocks;
        if (s->o_emb->count()) mc.d_b = s->af.emb_dim;
        if (s->o_filters->count()) mc.conv_filters = s->af.filters;
        if (s->o_w1->count()) mc.window1 = s->af.window1;
        if (s->o_w2->count()) mc.window2 = s->af.window2;
        if (s->o_pool->count()) mc.pool = s->af.pool;
        if (s->o_merge->count()) mc.merge = merge_mode_from(s->af.merge);
        if (s->o_bdrop->count()) mc.block_dropout = s->af.block_dropout;
        if (s->o_hidden->count()) mc.gru_hidden = s->af.gru_hidden;
        if (s->o_gdrop->count()) mc.gru_dropout = s->af.gru_dropout;
        if (s->o_maxlen->count()) mc.max_len = s->af.max_len;
        if (s->o_batch->count()) tc.batch_size = s->tf.batch_size;
        if (s->o_epochs->count()) tc.max_epochs = s->tf.epochs;
        if (s->o_patience->count()) tc.patience = s->tf.patience;
        if (s->o_seed->count()) tc.seed = s->tf.seed;
        if (s->o_lr->count()) adam.lr = s->tf.lr;
        if (s->tf.no_shuffle) tc.shuffle = false;

        LoadResult train_data = load_tsv(s->train_path);
        std::optional<LoadResult> dev_data;
        if (!s->dev_path.empty()) dev_data = load_tsv(s->dev_path);

        mc.n_classes = static_cast<int>(train_data.vocab.size());
        Model model = build_model(mc, train_data.vocab, tc.seed);

        std::cerr << "training on " << train_data.data.size() << " examples, "
                  << train_data.vocab.size() << " classes, " << mc.n_blocks << " blocks\n";

        std::string metrics_path = s->metrics_path;
        if (metrics_path.empty()) metrics_path = s->out_path + ".metrics.jsonl";
        std::ofstream metrics(metrics_path, std::ios::binary);
        if (!metrics) throw Error("cannot open '" + metrics_path + "' for writing");

        History hist = train(model, train_data.data, dev_data ? &dev_data->data : nullptr, tc,
                             adam, &std::cerr, &metrics);
        save_model(model, s->out_path);
        std::cerr << "best epoch " << hist.best_epoch << "; wrote " << s->out_path << " and "
                  << metrics_path << '\n';
    });
    return 0;
}

int cmd_predict(CLI::App& app) {
    auto model_path = std::make_shared<std::string>();
    auto in_path = std::make_shared<std::string>();
    auto out_path = std::make_shared<std::string>();
    auto group_name = std::make_shared<std::string>();
    auto fallback = std::make_shared<std::string>("hr");
    auto with_probs = std::make_shared<bool>(false);

    app.add_option("--model", *model_path, "model file (.rsid)")->required();
    app.add_option("--in", *in_path, "input file, one sentence per line (default stdin)");
    app.add_option("--out", *out_path, "output file (default stdout)");
    app.add_option("--group", *group_name, "project predictions into a language group (e.g. B)");
    app.add_option("--fallback", *fallback, "fallback code for out-of-group predictions");
    app.add_flag("--probs", *with_probs, "append per-class probabilities");

    app.callback([=]() {
        Model model = load_model(*model_path);

        std::ifstream fin;
        if (!in_path->empty()) {
            fin.open(*in_path, std::ios::binary);
            if (!fin) throw Error("cannot open '" + *in_path + "'");
        }
        std::istream& in = in_path->empty() ? std::cin : fin;
        std::ofstream fout;
        if (!out_path->empty()) {
            fout.open(*out_path, std::ios::binary);
            if (!fout) throw Error("cannot open '" + *out_path + "' for writing");
        }
        std::ostream& out = out_path->empty() ? std::cout : fout;

        const std::set<std::string>* group = nullptr;
        if (!group_name->empty()) {
            group = &named_group(*group_name);
            if (!group->count(*fallback))
                throw ConfigError("fallback '" + *fallback + "' is not in group '" + *group_name +
                                  "'");
        }

        const std::vector<std::string> lines = read_lines(in);
        Tensor probs;
        const std::vector<std::int32_t> preds =
            predict_indices(model, lines, *with_probs ? &probs : nullptr);
        const std::size_t k = model.labels.size();
        for (std::size_t i = 0; i < preds.size(); ++i) {
            std::string label = model.labels.at(static_cast<std::size_t>(preds[i]));
            if (group) label = project_to_group(label, *group, *fallback);
            out << label;
            if (*with_probs)
                for (std::size_t c = 0; c < k; ++c)
                    out << '\t' << model.labels.at(c) << '=' << probs.at(i, c);
            out << '\n';
        }
    });
    return 0;
}

int cmd_evaluate(CLI::App& app) {
    auto model_path = std::make_shared<std::string>();
    auto test_path = std::make_shared<std::string>();
    auto group_name = std::make_shared<std::string>();
    auto fallback = std::make_shared<std::string>("hr");
    auto json_path = std::make_shared<std::string>();
    auto confusion_path = std::make_shared<std::string>();

    app.add_option("--model", *model_path, "model file (.rsid)")->required();
    app.add_option("--test", *test_path, "test TSV")->required();
    app.add_option("--group", *group_name, "score within a language group (e.g. B)");
    app.add_option("--fallback", *fallback, "fallback code for out-of-group predictions");
    app.add_option("--json", *json_path, "also write the report as line-delimited JSON");
    app.add_option("--confusion", *confusion_path,
                   "write the confusion matrix TSV here instead of stdout");

    app.callback([=]() {
        Model model = load_model(*model_path);
        LoadResult test = load_tsv(*test_path);

        const std::set<std::string>* group = nullptr;
        if (!group_name->empty()) {
            group = &named_group(*group_name);
            if (!group->count(*fallback))
                throw ConfigError("fallback '" + *fallback + "' is not in group '" + *group_name +
                                  "'");
        }

        // every gold label must be scoreable
        std::set<std::string> offending;
        for (const Example& ex : test.data) {
            const bool known = group ? group->count(ex.label) > 0 : model.labels.contains(ex.label);
            if (!known) offending.insert(ex.label);
        }
        if (!offending.empty()) {
            std::string msg = group ? "test labels outside group: " : "test labels not in model vocabulary: ";
            for (const auto& l : offending) msg += l + " ";
            throw Error(msg);
        }

        std::vector<std::string> lines, golds;
        for (const Example& ex : test.data) {
            lines.push_back(ex.text);
            golds.push_back(ex.label);
        }
        const std::vector<std::int32_t> pred_idx = predict_indices(model, lines);
        std::vector<std::string> preds;
        preds.reserve(pred_idx.size());
        for (std::int32_t p : pred_idx) {
            std::string label = model.labels.at(static_cast<std::size_t>(p));
            if (group) label = project_to_group(label, *group, *fallback);
            preds.push_back(std::move(label));
        }

        LabelVocab vocab = group ? LabelVocab::from_labels(
                                       {group->begin(), group->end()})
                                 : model.labels;
        const ConfusionMatrix cm = confusion_matrix(golds, preds, vocab);
        const MetricsReport rep = metrics(cm);

        write_report_text(rep, std::cout);
        if (!json_path->empty()) {
            std::ofstream jout(*json_path, std::ios::binary);
            if (!jout) throw Error("cannot open '" + *json_path + "' for writing");
            write_report_json(rep, jout);
        }
        if (confusion_path->empty()) {
            std::cout << '\n';
            write_confusion_tsv(cm, std::cout);
        } else {
            std::ofstream cout_(*confusion_path, std::ios::binary);
            if (!cout_) throw Error("cannot open '" + *confusion_path + "' for writing");
            write_confusion_tsv(cm, cout_);
        }
    });
    return 0;
}

int cmd_clean(CLI::App& app) {
    auto in_path = std::make_shared<std::string>();
    auto out_path = std::make_shared<std::string>();
    auto drop_english = std::make_shared<bool>(false);
    auto english_model = std::make_shared<std::string>();
    auto english_label = std::make_shared<std::string>("en");
    auto english_threshold = std::make_shared<double>(0.5);

    app.add_option("--in", *in_path, "input TSV")->required();
    app.add_option("--out", *out_path, "output TSV (default stdout)");
    app.add_flag("--drop-english", *drop_english,
                 "remove lines the English predicate flags (stop-word heuristic by default)");
    app.add_option("--english-model", *english_model,
                   "use a trained model as the English predicate");
    app.add_option("--english-label", *english_label, "label the predicate model treats as English");
    app.add_option("--english-threshold", *english_threshold, "probability cutoff for --english-model");

    app.callback([=]() {
        LoadResult in = load_tsv(*in_path);

        Dataset cleaned;
        for (Example ex : in.data) {
            ex.text = clean_tweet(ex.text);
            if (ex.text.empty()) continue;  // lines cleaned to nothing are dropped
            ex.bytes.assign(ex.text.begin(), ex.text.end());
            cleaned.push_back(std::move(ex));
        }

        if (*drop_english) {
            if (!english_model->empty()) {
                auto model = std::make_shared<Model>(load_model(*english_model));
                if (!model->labels.contains(*english_label))
                    throw ConfigError("label '" + *english_label +
                                      "' is not in the predicate model's vocabulary");
                const std::int32_t target = model->labels.index_of(*english_label);
                const double threshold = *english_threshold;
                cleaned = filter_english(cleaned, [model, target, threshold](const std::string& t) {
                    ByteBatch b{1, static_cast<std::size_t>(model->config.max_len),
                                encode_bytes(t, static_cast<std::size_t>(model->config.max_len))};
                    const Tensor probs = predict_probs(*model, b);
                    return probs.data[static_cast<std::size_t>(target)] >= threshold;
                });
            } else {
                cleaned = filter_english(cleaned, english_stopword_predicate);
            }
        }

        if (out_path->empty()) {
            save_tsv(cleaned, std::cout);
        } else {
            save_tsv(cleaned, *out_path);
        }
        std::cerr << "kept " << cleaned.size() << " of " << in.data.size() << " lines\n";
    });
    return 0;
}

int cmd_gradcheck(CLI::App& app) {
    auto seed = std::make_shared<std::uint64_t>(42);
    auto inject = std::make_shared<std::string>();

    app.add_option("--seed", *seed, "random seed for the check suites");
    app.add_option("--inject-fault", *inject, "add a knowingly broken component (harness sanity)")
        ->group("");  // hidden

    app.callback([=]() {
        const std::vector<GradCheckResult> results = run_gradcheck(*seed, *inject);
        bool all_pass = true;
        std::vector<std::string> failed;
        for (const GradCheckResult& r : results) {
            std::ostringstream line;
            line << std::left << std::setw(24) << r.component << std::scientific
                 << std::setprecision(3) << r.max_rel_err << "  "
                 << (r.pass() ? "PASS" : "FAIL");
            std::cout << line.str() << '\n';
            if (!r.pass()) {
                all_pass = false;
                failed.push_back(r.component);
            }
        }
        if (!all_pass) {
            std::string msg = "gradient check failed for:";
            for (const auto& f : failed) msg += " " + f;
            throw Error(msg);
        }
    });
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"byte-level identification of similar languages"};
    app.require_subcommand(1);

    cmd_train(*app.add_subcommand("train", "train a model on a labelled TSV"));
    cmd_predict(*app.add_subcommand("predict", "label sentences, one per line"));
    cmd_evaluate(*app.add_subcommand("evaluate", "score a model against a labelled TSV"));
    cmd_clean(*app.add_subcommand("clean", "tweet cleanup for the Twitter subtasks"));
    cmd_gradcheck(*app.add_subcommand("gradcheck", "finite-difference check of all gradients"));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << '\n';
        return 2;
    } catch (const resident::UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

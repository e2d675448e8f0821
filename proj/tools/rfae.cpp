// rfae command-line tool: fit, encode, decode, roundtrip, bench and kernel export.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rfae/pipeline.hpp"

namespace {

enum Exit { ok = 0, runtime_error = 1, usage_error = 2 };

struct Globals {
    std::uint64_t seed = 42;
    std::size_t jobs = 1;
    bool verbose = false;
};

void note(const Globals& g, const std::string& msg) {
    if (g.verbose) std::cerr << "rfae: " << msg << '\n';
}

// Writes to the named file, or to stdout for "-".
class Sink {
public:
    explicit Sink(const std::string& path) {
        if (path == "-") return;
        file_ = std::make_unique<std::ofstream>(path, std::ios::binary);
        if (!*file_) throw rfae::Error("cli", "cannot write '" + path + "'");
    }
    std::ostream& stream() { return file_ ? *file_ : std::cout; }
    void finish(const std::string& path) {
        stream().flush();
        if (!stream()) throw rfae::Error("cli", "failed writing '" + path + "'");
    }

private:
    std::unique_ptr<std::ofstream> file_;
};

rfae::Embedding read_embeddings(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw rfae::Error("cli", "cannot read '" + path + "'");
    return rfae::read_embedding_csv(in);
}

struct ForestFlags {
    std::string mode = "unsupervised";
    std::string label;
    std::size_t trees = 500;
    std::size_t mtry = 0;
    double min_node_fraction = 0.0;
    std::size_t min_leaf_size = 1;
    std::size_t max_depth = 0;
    double subsample = 1.0;
    std::string sampling = "subsample";
    bool honest = false;
    std::size_t rounds = 1;
    double t = 1.0;

    void add(CLI::App* app) {
        app->add_option("--mode", mode, "Forest type")
            ->check(CLI::IsMember({"supervised", "completely_random", "unsupervised"}))
            ->capture_default_str();
        app->add_option("--label", label, "Response column (supervised mode)");
        app->add_option("--trees", trees, "Number of trees")->check(CLI::PositiveNumber)->capture_default_str();
        app->add_option("--mtry", mtry, "Candidate features per split (0: floor(sqrt(d)))")->capture_default_str();
        app->add_option("--min-node-fraction", min_node_fraction, "Minimum child fraction of its parent, in (0, 0.5]");
        app->add_option("--min-leaf-size", min_leaf_size, "Minimum rows per leaf")->check(CLI::PositiveNumber)->capture_default_str();
        app->add_option("--max-depth", max_depth, "Maximum tree depth (0: unlimited)")->capture_default_str();
        app->add_option("--subsample", subsample, "Per-tree sample fraction")->check(CLI::Range(0.0, 1.0))->capture_default_str();
        app->add_option("--sampling", sampling, "Per-tree row sampling")
            ->check(CLI::IsMember({"subsample", "bootstrap"}))
            ->capture_default_str();
        app->add_flag("--honest", honest, "Label leaves with a held-out half of each tree's rows");
        app->add_option("--rounds", rounds, "Discriminator rounds (unsupervised mode)")->check(CLI::PositiveNumber)->capture_default_str();
        app->add_option("--t", t, "Diffusion time")->check(CLI::NonNegativeNumber)->capture_default_str();
    }

    rfae::FitOptions options(const Globals& g) const {
        rfae::FitOptions o;
        o.mode = rfae::parse_mode(mode);
        if (!label.empty()) o.label = label;
        o.forest.n_trees = trees;
        o.forest.mtry = mtry;
        if (min_node_fraction > 0.0) o.forest.min_node_fraction = min_node_fraction;
        o.forest.min_leaf_size = min_leaf_size;
        if (max_depth > 0) o.forest.max_depth = max_depth;
        o.forest.subsample_fraction = subsample;
        o.forest.sampling = sampling == "bootstrap" ? rfae::Sampling::Bootstrap : rfae::Sampling::Subsample;
        o.forest.honest = honest;
        o.rounds = rounds;
        o.t = t;
        o.seed = g.seed;
        o.jobs = g.jobs;
        return o;
    }
};

struct DecoderFlags {
    std::string decoder = "knn";
    std::size_t k = 20;
    double lambda = 1e-4;
    std::size_t sparsity_cap = 100;
    std::size_t n_synth = 256;
    bool stochastic = false;

    void add(CLI::App* app) {
        app->add_option("--decoder", decoder, "Decoder")
            ->check(CLI::IsMember({"knn", "relabel", "lasso", "ilp"}))
            ->capture_default_str();
        app->add_option("--k", k, "Neighbours for knn")->check(CLI::PositiveNumber)->capture_default_str();
        app->add_option("--lambda", lambda, "Exclusive-lasso penalty")->check(CLI::NonNegativeNumber)->capture_default_str();
        app->add_option("--sparsity-cap", sparsity_cap, "Kernel entries kept per row for lasso")
            ->check(CLI::PositiveNumber)
            ->capture_default_str();
        app->add_option("--n-synth", n_synth, "Synthetic draws per node for relabel")->check(CLI::PositiveNumber)->capture_default_str();
        app->add_flag("--stochastic", stochastic, "Renormalize reconstructed kernel rows");
    }

    rfae::DecodeOptions options(const Globals& g) const {
        rfae::DecodeOptions o;
        o.decoder = rfae::parse_decoder(decoder);
        o.k = k;
        o.lambda = lambda;
        o.sparsity_cap = sparsity_cap;
        o.n_synth = n_synth;
        o.stochastic = stochastic;
        o.seed = g.seed;
        o.jobs = g.jobs;
        return o;
    }
};

std::vector<double> parse_rates(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        double v;
        if (!rfae::detail::parse_double(tok, v)) throw CLI::ValidationError("--rates", "'" + tok + "' is not a number");
        out.push_back(v);
    }
    if (out.empty()) throw CLI::ValidationError("--rates", "no rates given");
    return out;
}

rfae::Table load_queries_reporting(const std::string& path, const rfae::ModelBundle& b) {
    const rfae::LoadResult r = rfae::load_queries(path, b);
    if (r.unseen_levels > 0)
        std::cerr << "rfae: warning: " << r.unseen_levels
                  << " categorical cell(s) hold levels unseen in training; routed as not-equal\n";
    if (r.dropped_rows > 0) std::cerr << "rfae: warning: dropped " << r.dropped_rows << " row(s) with missing values\n";
    return r.table;
}

void report_warnings(const std::vector<std::string>& w) {
    for (const auto& s : w) std::cerr << "rfae: warning: " << s << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    Globals g;
    CLI::App app{"Random-forest autoencoder: embed tabular data with a forest kernel and decode it back"};
    app.set_version_flag("--version", "rfae 1.0.0");
    app.require_subcommand(1);
    app.fallthrough();
    app.add_option("--seed", g.seed, "Master random seed")->capture_default_str();
    app.add_option("--jobs", g.jobs, "Worker threads (0: all cores)")->capture_default_str();
    app.add_flag("--verbose", g.verbose, "Progress and diagnostics on stderr");

    // fit
    auto* fit = app.add_subcommand("fit", "Fit a forest and spectral model, write a bundle");
    std::string fit_data, fit_out;
    std::size_t fit_dz = 2;
    ForestFlags fit_forest;
    fit->add_option("--data", fit_data, "Training CSV")->required()->check(CLI::ExistingFile);
    fit->add_option("--out", fit_out, "Bundle path")->required();
    fit->add_option("--dz", fit_dz, "Latent dimension")->check(CLI::PositiveNumber)->capture_default_str();
    fit_forest.add(fit);

    // encode
    auto* enc = app.add_subcommand("encode", "Embed rows with a fitted bundle");
    std::string enc_bundle, enc_data, enc_out = "-";
    enc->add_option("--bundle", enc_bundle, "Bundle path")->required()->check(CLI::ExistingFile);
    enc->add_option("--data", enc_data, "Query CSV")->required()->check(CLI::ExistingFile);
    enc->add_option("--out", enc_out, "Embedding CSV ('-' for stdout)")->capture_default_str();

    // decode
    auto* dec = app.add_subcommand("decode", "Map embeddings back to the input space");
    std::string dec_bundle, dec_emb, dec_out = "-", dec_trace;
    DecoderFlags dec_flags;
    dec->add_option("--bundle", dec_bundle, "Bundle path")->required()->check(CLI::ExistingFile);
    dec->add_option("--embeddings", dec_emb, "Embedding CSV")->required()->check(CLI::ExistingFile);
    dec->add_option("--out", dec_out, "Decoded CSV ('-' for stdout)")->capture_default_str();
    dec->add_option("--trace", dec_trace, "Per-row diagnostics JSON");
    dec_flags.add(dec);

    // roundtrip
    auto* rt = app.add_subcommand("roundtrip", "Encode and decode rows, report distortion");
    std::string rt_bundle, rt_data, rt_out, rt_report;
    DecoderFlags rt_flags;
    rt->add_option("--bundle", rt_bundle, "Bundle path")->required()->check(CLI::ExistingFile);
    rt->add_option("--data", rt_data, "Rows to reconstruct")->required()->check(CLI::ExistingFile);
    rt->add_option("--out", rt_out, "Reconstructed CSV");
    rt->add_option("--report", rt_report, "Distortion report JSON ('-' for stdout)");
    rt_flags.add(rt);

    // bench
    auto* bn = app.add_subcommand("bench", "Bootstrap distortion benchmark over latent rates");
    std::string bn_data, bn_out = "-", bn_rates = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0", bn_name;
    std::size_t bn_boot = 10;
    ForestFlags bn_forest;
    DecoderFlags bn_flags;
    bn->add_option("--data", bn_data, "Dataset CSV")->required()->check(CLI::ExistingFile);
    bn->add_option("--out", bn_out, "Results CSV ('-' for stdout)")->capture_default_str();
    bn->add_option("--rates", bn_rates, "Comma-separated latent rates")->capture_default_str();
    bn->add_option("--bootstraps", bn_boot, "Bootstrap repetitions")->check(CLI::PositiveNumber)->capture_default_str();
    bn->add_option("--dataset", bn_name, "Dataset name in the output (default: file stem)");
    bn_forest.add(bn);
    bn_flags.add(bn);

    // kernel
    auto* ke = app.add_subcommand("kernel", "Export the training or cross kernel");
    std::string ke_bundle, ke_data, ke_out = "-";
    bool ke_dense = false;
    ke->add_option("--bundle", ke_bundle, "Bundle path")->required()->check(CLI::ExistingFile);
    ke->add_option("--data", ke_data, "Query CSV; omit for the training kernel")->check(CLI::ExistingFile);
    ke->add_option("--out", ke_out, "Output path ('-' for stdout)")->capture_default_str();
    ke->add_flag("--dense", ke_dense, "Dense CSV instead of coordinate text");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return usage_error;
    }

    try {
        if (*fit) {
            rfae::FitOptions o = fit_forest.options(g);
            o.dz = fit_dz;
            const rfae::LoadResult data = rfae::load_csv(fit_data);
            if (data.dropped_rows > 0) std::cerr << "rfae: warning: dropped " << data.dropped_rows << " row(s) with missing values\n";
            note(g, "fitting " + fit_forest.mode + " forest on " + std::to_string(data.table.rows()) + " rows");
            rfae::FitDiagnostics diag;
            const rfae::ModelBundle b = rfae::fit_bundle(data.table, o, &diag);
            report_warnings(diag.warnings);
            b.save(fit_out);
            note(g, "wrote " + fit_out);
        } else if (*enc) {
            const rfae::ModelBundle b = rfae::ModelBundle::load(enc_bundle);
            const rfae::Table q = load_queries_reporting(enc_data, b);
            rfae::Session s(b, g.jobs);
            std::vector<std::string> warnings;
            const rfae::Embedding z = s.encode(q, nullptr, &warnings);
            report_warnings(warnings);
            Sink out(enc_out);
            rfae::write_embedding_csv(out.stream(), z);
            out.finish(enc_out);
        } else if (*dec) {
            const rfae::ModelBundle b = rfae::ModelBundle::load(dec_bundle);
            const rfae::Embedding z = read_embeddings(dec_emb);
            rfae::Session s(b, g.jobs);
            nlohmann::json trace;
            const rfae::Table x = rfae::decode(s, z, dec_flags.options(g), dec_trace.empty() ? nullptr : &trace);
            Sink out(dec_out);
            rfae::write_csv(out.stream(), x);
            out.finish(dec_out);
            if (!dec_trace.empty()) {
                Sink t(dec_trace);
                t.stream() << trace.dump(2) << '\n';
                t.finish(dec_trace);
            }
        } else if (*rt) {
            const rfae::ModelBundle b = rfae::ModelBundle::load(rt_bundle);
            const rfae::Table q = load_queries_reporting(rt_data, b);
            rfae::Session s(b, g.jobs);
            const rfae::RoundtripResult r = rfae::roundtrip(s, q, rt_flags.options(g));
            if (!rt_out.empty()) rfae::save_csv(rt_out, r.reconstructed);
            if (!rt_report.empty()) {
                Sink out(rt_report);
                out.stream() << r.report.to_json().dump(2) << '\n';
                out.finish(rt_report);
            }
            if (rt_report != "-") std::printf("distortion %.6f\n", r.report.combined);
        } else if (*bn) {
            rfae::BenchOptions o;
            o.rates = parse_rates(bn_rates);
            o.bootstraps = bn_boot;
            o.fit = bn_forest.options(g);
            o.decode = bn_flags.options(g);
            o.dataset = bn_name.empty() ? std::filesystem::path(bn_data).stem().string() : bn_name;
            const rfae::LoadResult data = rfae::load_csv(bn_data);
            note(g, "benchmarking " + std::to_string(o.rates.size()) + " rate(s) x " + std::to_string(bn_boot) +
                        " bootstrap(s)");
            const auto rows = rfae::bench(data.table, o);
            Sink out(bn_out);
            rfae::write_bench_csv(out.stream(), rows);
            out.finish(bn_out);
        } else if (*ke) {
            const rfae::ModelBundle b = rfae::ModelBundle::load(ke_bundle);
            rfae::Session s(b, g.jobs);
            const rfae::SparseKernelMatrix K =
                ke_data.empty() ? s.reference().train(g.jobs) : s.reference().cross(load_queries_reporting(ke_data, b), g.jobs);
            Sink out(ke_out);
            if (ke_dense)
                K.write_dense_csv(out.stream());
            else
                K.write_coo(out.stream());
            out.finish(ke_out);
        }
    } catch (const CLI::ValidationError& e) {
        std::cerr << "rfae: " << e.what() << '\n';
        return usage_error;
    } catch (const std::exception& e) {
        std::cerr << "rfae: error: " << e.what() << '\n';
        return runtime_error;
    }
    return ok;
}

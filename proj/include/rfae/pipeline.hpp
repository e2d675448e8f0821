#pragma once

#include <chrono>
#include <cmath>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rfae/bundle.hpp"
#include "rfae/core.hpp"
#include "rfae/data.hpp"
#include "rfae/decode.hpp"
#include "rfae/forest.hpp"
#include "rfae/kernel.hpp"
#include "rfae/metrics.hpp"
#include "rfae/spectral.hpp"

namespace rfae {

enum class ForestMode { Supervised, CompletelyRandom, Unsupervised };

inline ForestMode parse_mode(const std::string& s) {
    if (s == "supervised") return ForestMode::Supervised;
    if (s == "completely_random") return ForestMode::CompletelyRandom;
    if (s == "unsupervised") return ForestMode::Unsupervised;
    throw Error("cli", "unknown forest mode '" + s + "'");
}

inline std::string mode_name(ForestMode m) {
    switch (m) {
        case ForestMode::Supervised: return "supervised";
        case ForestMode::CompletelyRandom: return "completely_random";
        default: return "unsupervised";
    }
}

struct FitOptions {
    ForestMode mode = ForestMode::Unsupervised;
    std::optional<std::string> label;
    ForestParams forest;
    std::size_t rounds = 1;  // unsupervised refits
    std::size_t dz = 2;
    double t = 1.0;
    std::uint64_t seed = 42;
    std::size_t jobs = 1;
};

struct FitDiagnostics {
    std::vector<std::string> warnings;
};

/// Features and (for supervised fits) labels pulled out of a loaded table.
struct Prepared {
    Table x;
    std::optional<Labels> labels;
};

inline Prepared prepare_training(const Table& data, ForestMode mode, const std::optional<std::string>& label) {
    if (mode == ForestMode::Supervised) {
        if (!label) throw Error("cli", "supervised mode needs a label column");
        const auto j = data.schema().index_of(*label);
        if (!j) throw Error("cli", "label column '" + *label + "' not found");
        if (data.cols() < 2) throw Error("cli", "no feature columns besides the label");
        return {data.drop_column(*j), Labels::from_column(data, *j)};
    }
    if (label) throw Error("cli", "a label column is only used in supervised mode");
    return {data, std::nullopt};
}

inline Forest fit_forest(const Prepared& p, ForestMode mode, ForestParams params, std::size_t rounds) {
    switch (mode) {
        case ForestMode::Supervised: return fit_supervised(p.x, *p.labels, params);
        case ForestMode::CompletelyRandom: return fit_completely_random(p.x, params);
        default: return fit_unsupervised(p.x, params, rounds).pruned_to(p.x);
    }
}

inline EigenOptions eigen_options(std::uint64_t seed, std::size_t jobs) {
    EigenOptions o;
    o.lanczos.seed = derive_seed(seed, 1);
    o.jobs = jobs;
    return o;
}

/// Leading `dz` pairs of a model fitted with at least that many.
inline SpectralModel truncate_model(const SpectralModel& m, std::size_t dz, double t) {
    if (dz == 0 || dz > m.dz()) throw Error("spectral", "cannot truncate to " + std::to_string(dz) + " dimensions");
    SpectralModel out = m;
    const auto k = static_cast<Eigen::Index>(dz);
    out.lambda = m.lambda.head(k);
    out.V = m.V.leftCols(k);
    out.residuals = m.residuals.head(k);
    set_diffusion_time(out, t);
    return out;
}

inline ModelBundle fit_bundle(const Table& data, const FitOptions& opt, FitDiagnostics* diag = nullptr) {
    Prepared p = prepare_training(data, opt.mode, opt.label);
    const std::size_t n = p.x.rows();
    if (n < 2) throw Error("cli", "need at least 2 training rows");
    if (opt.dz < 1 || opt.dz >= n)
        throw Error("cli", "d_Z must lie in [1, n-1] = [1, " + std::to_string(n - 1) + "]; got " + std::to_string(opt.dz));
    ForestParams fp = opt.forest;
    fp.seed = opt.seed;
    fp.jobs = opt.jobs;
    ModelBundle b;
    b.mode = mode_name(opt.mode);
    b.label = opt.label;
    b.schema = p.x.schema();
    b.forest = fit_forest(p, opt.mode, fp, opt.rounds);
    KernelReference ref(b.forest, p.x, opt.jobs);
    b.model = eigendecompose(ref.train(opt.jobs), opt.dz, eigen_options(opt.seed, opt.jobs));
    set_diffusion_time(b.model, opt.t);
    b.synthetic = build_synthetic_training(b.forest, LeafRegions(b.forest), p.x, derive_seed(opt.seed, 2), opt.jobs);
    if (diag) diag->warnings = b.model.warnings;
    return b;
}

/// Reorders a query table's columns to the bundle schema, dropping the label
/// column and anything else not in the schema.
inline Table conform(const Table& t, const ModelBundle& b) {
    const Schema& s = b.schema;
    std::vector<std::size_t> src;
    for (std::size_t j = 0; j < s.size(); ++j) {
        const auto k = t.schema().index_of(s[j].name);
        if (!k) throw Error("cli", "query data lacks column '" + s[j].name + "'");
        if (t.schema()[*k].kind != s[j].kind) throw Error("cli", "column '" + s[j].name + "' has the wrong type");
        src.push_back(*k);
    }
    for (std::size_t j = 0; j < t.cols(); ++j) {
        const auto& name = t.schema()[j].name;
        if (!s.index_of(name) && !(b.label && *b.label == name))
            throw Error("cli", "query column '" + name + "' is not part of the model");
    }
    std::vector<Column> cols;
    for (auto k : src) cols.push_back(t.schema()[k]);
    std::vector<double> cells(t.rows() * src.size());
    for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = 0; j < src.size(); ++j) cells[i * src.size() + j] = t(i, src[j]);
    return Table(Schema(std::move(cols)), std::move(cells));
}

inline LoadResult load_queries(const std::string& path, const ModelBundle& b) {
    CsvOptions o;
    o.hints = hints_from_schema(b.schema);
    o.allow_empty = true;
    o.extend_levels = true;
    if (b.label) o.hints.push_back({*b.label, ColumnKind::Categorical, {}});
    LoadResult r = load_csv(path, o);
    r.table = conform(r.table, b);
    return r;
}

/// Shared per-bundle state for encoding and decoding.
class Session {
public:
    explicit Session(const ModelBundle& b, std::size_t jobs = 1)
        : bundle_(&b), jobs_(jobs), ref_(b.forest, b.synthetic.x, jobs) {}

    const ModelBundle& bundle() const { return *bundle_; }
    const KernelReference& reference() const { return ref_; }
    const LeafRegions& regions() const {
        std::call_once(regions_once_, [&] { regions_ = LeafRegions(bundle_->forest); });
        return regions_;
    }

    Embedding encode(const Table& queries, RouteWarnings* warn = nullptr,
                     std::vector<std::string>* warnings = nullptr) const {
        return nystrom_embed(ref_.cross(queries, jobs_, warn), bundle_->model, warnings);
    }

private:
    const ModelBundle* bundle_;
    std::size_t jobs_;
    KernelReference ref_;
    mutable std::once_flag regions_once_;
    mutable LeafRegions regions_;
};

enum class Decoder { Knn, Relabel, Lasso, Ilp };

inline Decoder parse_decoder(const std::string& s) {
    if (s == "knn") return Decoder::Knn;
    if (s == "relabel") return Decoder::Relabel;
    if (s == "lasso") return Decoder::Lasso;
    if (s == "ilp") return Decoder::Ilp;
    throw Error("cli", "unknown decoder '" + s + "'");
}

inline std::string decoder_name(Decoder d) {
    switch (d) {
        case Decoder::Knn: return "knn";
        case Decoder::Relabel: return "relabel";
        case Decoder::Lasso: return "lasso";
        default: return "ilp";
    }
}

struct DecodeOptions {
    Decoder decoder = Decoder::Knn;
    std::size_t k = 20;
    double lambda = 1e-4;
    std::size_t sparsity_cap = 100;
    std::size_t n_synth = 256;
    bool stochastic = false;
    std::uint64_t seed = 42;
    std::size_t jobs = 1;
};

/// Decodes embeddings; fills `trace` with one JSON object per row when given.
inline Table decode(const Session& s, const Embedding& Z0, const DecodeOptions& opt, nlohmann::json* trace = nullptr) {
    const ModelBundle& b = s.bundle();
    if (static_cast<std::size_t>(Z0.cols()) != b.model.dz())
        throw Error("decode", "embedding has " + std::to_string(Z0.cols()) + " columns, model has d_Z = " +
                                  std::to_string(b.model.dz()));
    const std::uint64_t seed = derive_seed(opt.seed, 3);
    const auto m = static_cast<std::size_t>(Z0.rows());
    ReconstructOptions rec;
    rec.stochastic = opt.stochastic;
    if (trace) *trace = nlohmann::json::array();
    auto as_json = [](const LeafAssignment& a) { return nlohmann::json(a.leaves); };

    switch (opt.decoder) {
        case Decoder::Knn: {
            KnnTrace kt;
            Table out = knn_decode(Z0, b.model, b.synthetic, opt.k, seed, opt.jobs, trace ? &kt : nullptr);
            if (trace)
                for (const auto& nb : kt.neighbors)
                    trace->push_back({{"neighbors", nb.indices}, {"distances", nb.distances}, {"weights", nb.weights}});
            return out;
        }
        case Decoder::Relabel: {
            const RelabeledForest rf = relabel_forest(s.reference(), b.model, opt.n_synth, seed, opt.jobs);
            std::vector<RelabelRowTrace> rt;
            Table out = relabel_decode(rf, b.forest, s.regions(), Z0, derive_seed(seed, 1), opt.jobs, trace ? &rt : nullptr);
            if (trace)
                for (const auto& r : rt)
                    trace->push_back({{"routed", as_json(r.routed)},
                                      {"assigned", as_json(r.assigned)},
                                      {"fallback", r.fallback},
                                      {"repaired_trees", r.repaired},
                                      {"degenerate_nodes", rf.degenerate}});
            return out;
        }
        case Decoder::Lasso: {
            LassoDecodeOptions lo;
            lo.lambda = opt.lambda;
            lo.sparsity_cap = opt.sparsity_cap;
            lo.reconstruct = rec;
            LassoDecodeTrace lt;
            Table out = lasso_decode(Z0, b.model, s.reference(), s.regions(), lo, seed, opt.jobs, trace ? &lt : nullptr);
            if (trace)
                for (const auto& r : lt.rows)
                    trace->push_back({{"neighbors", r.neighbors},
                                      {"objective", r.objective},
                                      {"converged", r.converged},
                                      {"assigned", as_json(r.greedy.assignment)},
                                      {"greedy_rounds", r.greedy.rounds},
                                      {"repaired_trees", r.greedy.repaired},
                                      {"random_clique", r.greedy.random_clique}});
            return out;
        }
        default: {
            const std::size_t d = b.schema.size();
            std::vector<double> cells(m * d);
            std::vector<nlohmann::json> rows(trace ? m : 0);
            parallel_for(m, opt.jobs, [&](std::size_t r) {
                const Eigen::VectorXd khat = reconstruct_kernel_row(Z0.row(static_cast<Eigen::Index>(r)), b.model, rec);
                const IlpResult res = ilp_decode_exact(khat, s.reference(), s.regions());
                Rng rng(derive_seed(seed, r));
                const auto x = region_sample(s.regions().intersect(res.assignment), rng);
                std::copy(x.begin(), x.end(), cells.begin() + static_cast<std::ptrdiff_t>(r * d));
                if (trace) {
                    nlohmann::json ties = nlohmann::json::array();
                    for (const auto& t : res.ties) ties.push_back(as_json(t));
                    rows[r] = {{"assigned", as_json(res.assignment)},
                               {"objective", res.objective},
                               {"ties", ties},
                               {"explored", res.explored}};
                }
            });
            if (trace)
                for (auto& r : rows) trace->push_back(std::move(r));
            return Table(b.schema, std::move(cells));
        }
    }
}

/// Re-expresses a decoded table in the query's schema (which may carry extra
/// categorical levels seen only in the queries) so the two can be compared.
inline Table in_schema_of(const Table& decoded, const Table& queries) {
    return Table(queries.schema(), decoded.cells());
}

struct RoundtripResult {
    Embedding z;
    Table reconstructed;
    DistortionReport report;
};

inline RoundtripResult roundtrip(const Session& s, const Table& queries, const DecodeOptions& opt) {
    RoundtripResult r;
    r.z = s.encode(queries);
    r.reconstructed = in_schema_of(decode(s, r.z, opt), queries);
    r.report = distortion(queries, r.reconstructed);
    return r;
}

/// d_Z = max(1, round-half-up(rate * d_X)).
inline std::size_t latent_dim(double rate, std::size_t dx) {
    if (!(rate > 0.0) || !std::isfinite(rate)) throw Error("cli", "latent rates must be positive");
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(rate * static_cast<double>(dx) + 0.5)));
}

struct BenchOptions {
    std::string dataset = "data";
    std::vector<double> rates{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    std::size_t bootstraps = 10;
    FitOptions fit;  // dz is ignored
    DecodeOptions decode;
};

struct BenchRow {
    std::string dataset;
    double rate = 0.0;
    std::size_t dz = 0;
    std::uint64_t seed = 0;
    std::string decoder;
    double distortion = 0.0;
    double runtime = 0.0;  // seconds: shared fit time plus this row's encode and decode
};

/// Bootstrap benchmark. Each bootstrap fits one forest and spectral model on
/// its distinct in-bag rows, with enough eigenpairs for the largest rate,
/// then encodes and decodes the out-of-bag rows at every rate.
inline std::vector<BenchRow> bench(const Table& data, const BenchOptions& opt) {
    if (opt.rates.empty()) throw Error("cli", "no latent rates given");
    if (opt.bootstraps == 0) throw Error("cli", "bootstraps must be positive");
    const std::size_t dx = prepare_training(data, opt.fit.mode, opt.fit.label).x.cols();
    std::vector<std::vector<BenchRow>> per(opt.bootstraps);
    const std::size_t outer = std::min(opt.fit.jobs == 0 ? default_jobs() : opt.fit.jobs, opt.bootstraps);
    const std::size_t inner = std::max<std::size_t>(1, (opt.fit.jobs == 0 ? default_jobs() : opt.fit.jobs) / outer);
    using clock = std::chrono::steady_clock;
    parallel_for(opt.bootstraps, outer, [&](std::size_t bi) {
        const std::uint64_t seed = derive_seed(opt.fit.seed, 1000 + bi);
        const SplitIndices split = bootstrap_split(data.rows(), seed);
        std::vector<std::size_t> train(split.train);
        std::sort(train.begin(), train.end());
        train.erase(std::unique(train.begin(), train.end()), train.end());
        const Table tr = data.select_rows(train), te = data.select_rows(split.holdout);

        std::vector<std::size_t> dzs;
        for (double r : opt.rates) dzs.push_back(std::min(latent_dim(r, dx), train.size() - 1));
        const auto t0 = clock::now();
        FitOptions fo = opt.fit;
        fo.seed = seed;
        fo.jobs = inner;
        fo.dz = *std::max_element(dzs.begin(), dzs.end());
        const ModelBundle full = fit_bundle(tr, fo);
        const Prepared q = prepare_training(te, opt.fit.mode, opt.fit.label);
        const double fit_seconds = std::chrono::duration<double>(clock::now() - t0).count();

        for (std::size_t ri = 0; ri < opt.rates.size(); ++ri) {
            const auto t1 = clock::now();
            ModelBundle b = full;
            b.model = truncate_model(full.model, dzs[ri], fo.t);
            Session s(b, inner);
            DecodeOptions d = opt.decode;
            d.seed = seed;
            d.jobs = inner;
            const Table rec = decode(s, s.encode(q.x), d);
            const double dist = distortion(q.x, in_schema_of(rec, q.x)).combined;
            const double secs = std::chrono::duration<double>(clock::now() - t1).count();
            per[bi].push_back({opt.dataset, opt.rates[ri], dzs[ri], seed, decoder_name(opt.decode.decoder), dist,
                               fit_seconds + secs});
        }
    });
    std::vector<BenchRow> rows;
    for (std::size_t ri = 0; ri < opt.rates.size(); ++ri)
        for (std::size_t bi = 0; bi < opt.bootstraps; ++bi) rows.push_back(per[bi][ri]);
    return rows;
}

inline void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows) {
    out << "dataset,rate,d_z,seed,decoder,distortion,runtime\n";
    for (const auto& r : rows)
        out << detail::quote_csv(r.dataset) << ',' << detail::format_double(r.rate) << ',' << r.dz << ',' << r.seed
            << ',' << r.decoder << ',' << detail::format_double(r.distortion) << ',' << detail::format_double(r.runtime)
            << '\n';
}

}  // namespace rfae

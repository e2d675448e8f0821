// Fits an unsupervised forest on a small mixed-type table, then embeds fresh
// rows in two dimensions and reconstructs them with each decoder.
//
//   sample_roundtrip [rows]

#include <cstdio>
#include <string>

#include "rfae/rfae.hpp"

namespace {

rfae::Table make_data(std::size_t n, std::uint64_t seed) {
    rfae::Schema schema({{"length", rfae::ColumnKind::Continuous, {}},
                         {"width", rfae::ColumnKind::Continuous, {}},
                         {"colour", rfae::ColumnKind::Categorical, {"red", "green", "blue"}}});
    rfae::Rng rng(seed);
    std::vector<double> cells;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = rng.index(3);
        const double len = 2.0 * static_cast<double>(c) + 0.5 * rng.normal();
        cells.push_back(len);
        cells.push_back(0.5 * len + 0.3 * rng.normal());
        cells.push_back(static_cast<double>(c));
    }
    return rfae::Table(schema, cells);
}

}  // namespace

int main(int argc, char** argv) {
    try {
        const std::size_t n = argc > 1 ? std::stoul(argv[1]) : 150;
        const rfae::Table data = make_data(n, 7), fresh = make_data(40, 8);

        rfae::FitOptions fit;
        fit.forest.n_trees = 100;
        fit.forest.min_leaf_size = 5;
        fit.dz = 2;
        const rfae::ModelBundle bundle = rfae::fit_bundle(data, fit);
        std::printf("fitted %zu trees on %zu rows, eigenvalues %.4f %.4f\n", bundle.forest.trees().size(), n,
                    bundle.model.lambda(0), bundle.model.lambda(1));

        const rfae::Session session(bundle);
        for (auto dec : {rfae::Decoder::Knn, rfae::Decoder::Relabel, rfae::Decoder::Lasso}) {
            rfae::DecodeOptions opt;
            opt.decoder = dec;
            opt.n_synth = 64;
            const rfae::RoundtripResult r = rfae::roundtrip(session, fresh, opt);
            std::printf("%-8s distortion %.4f (", rfae::decoder_name(dec).c_str(), r.report.combined);
            for (std::size_t j = 0; j < r.report.names.size(); ++j)
                std::printf("%s%s %.3f", j ? ", " : "", r.report.names[j].c_str(), r.report.per_feature[j]);
            std::printf(")\n");
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "sample_roundtrip: %s\n", e.what());
        return 1;
    }
    return 0;
}

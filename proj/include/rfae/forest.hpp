#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rfae/core.hpp"
#include "rfae/data.hpp"
#include "rfae/region.hpp"

namespace rfae {

/// Axis-aligned literal. LessThan sends x < threshold left (ties go right);
/// Equals sends x == level left, every other level right.
struct SplitRule {
    enum class Kind { LessThan, Equals };

    std::size_t feature = 0;
    Kind kind = Kind::LessThan;
    double threshold = 0.0;
    std::size_t level = 0;

    static SplitRule less_than(std::size_t feature, double threshold) {
        return {feature, Kind::LessThan, threshold, 0};
    }
    static SplitRule equals(std::size_t feature, std::size_t level) { return {feature, Kind::Equals, 0.0, level}; }

    bool goes_left(std::span<const double> x) const {
        const double v = x[feature];
        if (kind == Kind::LessThan) return v < threshold;
        return v == static_cast<double>(level);
    }

    bool operator==(const SplitRule&) const = default;
};

struct Node {
    SplitRule split;
    int left = -1;
    int right = -1;
    int leaf = -1;           // leaf id, or -1 for internal nodes
    std::size_t count = 0;   // samples that reached the node (labeling sample for leaves)
    std::vector<double> stat;  // leaf mean (regression) or class frequencies

    bool is_leaf() const { return leaf >= 0; }

    static Node internal(SplitRule s, int left, int right) {
        Node n;
        n.split = s;
        n.left = left;
        n.right = right;
        return n;
    }
    static Node make_leaf(int id, std::size_t count = 0, std::vector<double> stat = {}) {
        Node n;
        n.leaf = id;
        n.count = count;
        n.stat = std::move(stat);
        return n;
    }

    bool operator==(const Node&) const = default;
};

class Tree {
public:
    Tree() = default;

    /// Node 0 is the root. Leaf ids must be 0..L-1 and every node reachable
    /// exactly once.
    explicit Tree(std::vector<Node> nodes) : nodes_(std::move(nodes)) { index(); }

    const std::vector<Node>& nodes() const { return nodes_; }
    std::vector<Node>& mutable_nodes() { return nodes_; }
    std::size_t leaf_count() const { return leaf_node_.size(); }
    std::size_t leaf_node(std::size_t leaf) const { return leaf_node_[leaf]; }

    std::size_t route(std::span<const double> x) const {
        std::size_t i = 0;
        while (!nodes_[i].is_leaf())
            i = static_cast<std::size_t>(nodes_[i].split.goes_left(x) ? nodes_[i].left : nodes_[i].right);
        return static_cast<std::size_t>(nodes_[i].leaf);
    }

    std::size_t depth() const {
        std::size_t best = 0;
        std::vector<std::pair<std::size_t, std::size_t>> stack{{0, 0}};
        while (!stack.empty()) {
            auto [i, d] = stack.back();
            stack.pop_back();
            best = std::max(best, d);
            if (!nodes_[i].is_leaf()) {
                stack.push_back({static_cast<std::size_t>(nodes_[i].left), d + 1});
                stack.push_back({static_cast<std::size_t>(nodes_[i].right), d + 1});
            }
        }
        return best;
    }

    bool operator==(const Tree& o) const { return nodes_ == o.nodes_; }

private:
    void index() {
        if (nodes_.empty()) throw Error("forest", "tree has no nodes");
        std::vector<char> seen(nodes_.size(), 0);
        std::vector<std::size_t> stack{0};
        std::size_t leaves = 0;
        while (!stack.empty()) {
            const std::size_t i = stack.back();
            stack.pop_back();
            if (i >= nodes_.size() || seen[i]) throw Error("forest", "malformed tree: bad or repeated child link");
            seen[i] = 1;
            if (nodes_[i].is_leaf()) {
                ++leaves;
            } else {
                if (nodes_[i].left < 0 || nodes_[i].right < 0) throw Error("forest", "internal node without children");
                stack.push_back(static_cast<std::size_t>(nodes_[i].right));
                stack.push_back(static_cast<std::size_t>(nodes_[i].left));
            }
        }
        if (std::find(seen.begin(), seen.end(), 0) != seen.end()) throw Error("forest", "unreachable tree node");
        leaf_node_.assign(leaves, nodes_.size());
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            if (!nodes_[i].is_leaf()) continue;
            const auto id = static_cast<std::size_t>(nodes_[i].leaf);
            if (id >= leaves || leaf_node_[id] != nodes_.size()) throw Error("forest", "leaf ids are not contiguous");
            leaf_node_[id] = i;
        }
    }

    std::vector<Node> nodes_;
    std::vector<std::size_t> leaf_node_;
};

enum class Sampling { Subsample, Bootstrap };

struct ForestParams {
    std::size_t n_trees = 500;
    std::size_t mtry = 0;  // 0: floor(sqrt(d)), at least 1
    std::optional<double> min_node_fraction;  // gamma in (0, 0.5]
    std::size_t min_leaf_size = 1;
    std::optional<std::size_t> max_depth;
    double subsample_fraction = 1.0;
    Sampling sampling = Sampling::Subsample;
    bool honest = false;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;  // not serialized: never changes results

    void validate() const {
        if (n_trees == 0) throw Error("forest", "n_trees must be positive");
        if (min_node_fraction && !(*min_node_fraction > 0.0 && *min_node_fraction <= 0.5))
            throw Error("forest", "min_node_fraction must lie in (0, 0.5]");
        if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0))
            throw Error("forest", "subsample_fraction must lie in (0, 1]");
        if (min_leaf_size == 0) throw Error("forest", "min_leaf_size must be at least 1");
    }

    nlohmann::json to_json() const {
        nlohmann::json j{{"n_trees", n_trees},
                         {"mtry", mtry},
                         {"min_leaf_size", min_leaf_size},
                         {"subsample_fraction", subsample_fraction},
                         {"sampling", sampling == Sampling::Bootstrap ? "bootstrap" : "subsample"},
                         {"honest", honest},
                         {"seed", seed}};
        j["min_node_fraction"] = min_node_fraction ? nlohmann::json(*min_node_fraction) : nlohmann::json(nullptr);
        j["max_depth"] = max_depth ? nlohmann::json(*max_depth) : nlohmann::json(nullptr);
        return j;
    }

    static ForestParams from_json(const nlohmann::json& j) {
        ForestParams p;
        p.n_trees = j.at("n_trees").get<std::size_t>();
        p.mtry = j.at("mtry").get<std::size_t>();
        p.min_leaf_size = j.at("min_leaf_size").get<std::size_t>();
        p.subsample_fraction = j.at("subsample_fraction").get<double>();
        p.sampling = j.at("sampling").get<std::string>() == "bootstrap" ? Sampling::Bootstrap : Sampling::Subsample;
        p.honest = j.at("honest").get<bool>();
        p.seed = j.at("seed").get<std::uint64_t>();
        if (!j.at("min_node_fraction").is_null()) p.min_node_fraction = j.at("min_node_fraction").get<double>();
        if (!j.at("max_depth").is_null()) p.max_depth = j.at("max_depth").get<std::size_t>();
        return p;
    }
};

/// Response variable used to grow supervised trees. `classes == 0` means
/// regression; otherwise values are class indices in [0, classes).
struct Labels {
    std::vector<double> values;
    std::size_t classes = 0;

    bool classification() const { return classes > 0; }

    static Labels regression(std::vector<double> v) { return {std::move(v), 0}; }
    static Labels classes_of(std::vector<double> v, std::size_t k) { return {std::move(v), k}; }

    /// Use a table column as response: categorical columns become classes.
    static Labels from_column(const Table& t, std::size_t j) {
        return {t.column(j), t.schema()[j].categorical() ? t.schema()[j].levels.size() : 0};
    }
};

/// Per-sample leaf ids, one per tree.
struct LeafAssignment {
    std::vector<std::uint32_t> leaves;

    bool operator==(const LeafAssignment&) const = default;
};

/// Counts routing anomalies; currently only categorical levels unseen during
/// training (those evaluate "not equal" at every Equals split).
struct RouteWarnings {
    std::size_t unseen_levels = 0;
};

class Forest {
public:
    Forest() = default;

    /// Assemble a forest from hand-built trees. Feature ranges and leaf
    /// counts come from `training`; leaf stats are left empty.
    static Forest from_trees(const Table& training, std::vector<Tree> trees, ForestParams params = {}) {
        Forest f;
        f.schema_ = training.schema();
        f.params_ = params;
        f.params_.n_trees = trees.size();
        f.trees_ = std::move(trees);
        f.ranges_ = compute_ranges(training);
        f.finish();
        for (auto& t : f.trees_)
            for (auto& nd : t.mutable_nodes()) nd.count = 0;
        for (std::size_t i = 0; i < training.rows(); ++i) {
            auto x = training.row(i);
            for (auto& t : f.trees_) {
                std::size_t k = 0;
                auto& nodes = t.mutable_nodes();
                for (;;) {
                    ++nodes[k].count;
                    if (nodes[k].is_leaf()) break;
                    k = static_cast<std::size_t>(nodes[k].split.goes_left(x) ? nodes[k].left : nodes[k].right);
                }
            }
        }
        for (const auto& t : f.trees_)
            for (std::size_t l = 0; l < t.leaf_count(); ++l)
                if (t.nodes()[t.leaf_node(l)].count == 0) throw Error("forest", "leaf without training samples");
        return f;
    }

    const Schema& schema() const { return schema_; }
    const ForestParams& params() const { return params_; }
    std::size_t size() const { return trees_.size(); }
    const Tree& tree(std::size_t b) const { return trees_[b]; }
    const std::vector<Tree>& trees() const { return trees_; }
    const std::vector<std::pair<double, double>>& feature_ranges() const { return ranges_; }
    std::size_t total_leaves() const { return offsets_.empty() ? 0 : offsets_.back(); }
    /// Global index of leaf 0 of tree b in the concatenated [d_Phi] space.
    std::size_t leaf_offset(std::size_t b) const { return offsets_[b]; }
    std::size_t label_classes() const { return label_classes_; }
    bool has_labels() const { return has_labels_; }

    /// Tree index owning a global leaf index.
    std::size_t tree_of(std::size_t global_leaf) const {
        auto it = std::upper_bound(offsets_.begin(), offsets_.end(), global_leaf);
        return static_cast<std::size_t>(it - offsets_.begin()) - 1;
    }

    std::size_t leaf_count(std::size_t b, std::size_t leaf) const {
        return trees_[b].nodes()[trees_[b].leaf_node(leaf)].count;
    }

    /// Unique in-bag rows per tree, kept only for the fitting session (OOB
    /// estimates). Not serialized.
    const std::vector<std::vector<std::uint32_t>>& inbag() const { return inbag_; }

    LeafAssignment route(std::span<const double> x, RouteWarnings* warn = nullptr) const {
        if (x.size() != schema_.size()) throw Error("forest", "row width does not match the forest schema");
        if (warn) {
            for (std::size_t j = 0; j < schema_.size(); ++j)
                if (schema_[j].categorical() && x[j] >= static_cast<double>(schema_[j].levels.size()))
                    ++warn->unseen_levels;
        }
        LeafAssignment a;
        a.leaves.resize(trees_.size());
        for (std::size_t b = 0; b < trees_.size(); ++b) a.leaves[b] = static_cast<std::uint32_t>(trees_[b].route(x));
        return a;
    }

    nlohmann::json to_json() const {
        nlohmann::json trees = nlohmann::json::array();
        for (const auto& t : trees_) {
            nlohmann::json nodes = nlohmann::json::array();
            for (const auto& nd : t.nodes()) {
                nlohmann::json jn;
                if (nd.is_leaf()) {
                    jn = {{"leaf", nd.leaf}, {"n", nd.count}, {"stat", nd.stat}};
                } else {
                    jn = {{"f", nd.split.feature}, {"l", nd.left}, {"r", nd.right}, {"n", nd.count}};
                    if (nd.split.kind == SplitRule::Kind::LessThan)
                        jn["lt"] = nd.split.threshold;
                    else
                        jn["eq"] = nd.split.level;
                }
                nodes.push_back(std::move(jn));
            }
            trees.push_back(std::move(nodes));
        }
        nlohmann::json ranges = nlohmann::json::array();
        for (const auto& r : ranges_) ranges.push_back({r.first, r.second});
        return nlohmann::json{{"schema", schema_.to_json()},
                              {"params", params_.to_json()},
                              {"label_classes", label_classes_},
                              {"has_labels", has_labels_},
                              {"feature_ranges", ranges},
                              {"trees", trees}};
    }

    static Forest from_json(const nlohmann::json& j) {
        Forest f;
        f.schema_ = Schema::from_json(j.at("schema"));
        f.params_ = ForestParams::from_json(j.at("params"));
        f.label_classes_ = j.at("label_classes").get<std::size_t>();
        f.has_labels_ = j.at("has_labels").get<bool>();
        for (const auto& r : j.at("feature_ranges")) f.ranges_.push_back({r.at(0).get<double>(), r.at(1).get<double>()});
        for (const auto& jt : j.at("trees")) {
            std::vector<Node> nodes;
            for (const auto& jn : jt) {
                Node nd;
                nd.count = jn.at("n").get<std::size_t>();
                if (jn.contains("leaf")) {
                    nd.leaf = jn.at("leaf").get<int>();
                    nd.stat = jn.at("stat").get<std::vector<double>>();
                } else {
                    nd.left = jn.at("l").get<int>();
                    nd.right = jn.at("r").get<int>();
                    nd.split.feature = jn.at("f").get<std::size_t>();
                    if (jn.contains("lt")) {
                        nd.split.kind = SplitRule::Kind::LessThan;
                        nd.split.threshold = jn.at("lt").get<double>();
                    } else {
                        nd.split.kind = SplitRule::Kind::Equals;
                        nd.split.level = jn.at("eq").get<std::size_t>();
                    }
                }
                nodes.push_back(std::move(nd));
            }
            f.trees_.emplace_back(std::move(nodes));
        }
        if (f.ranges_.size() != f.schema_.size()) throw Error("forest", "feature range count mismatch");
        f.finish();
        return f;
    }

    /// Copy whose leaves all hold at least one row of `reference`. A subtree
    /// with no reference rows is removed together with its parent split (the
    /// sibling takes the parent's place); leaf ids are renumbered in DFS order
    /// and counts become reference counts. Discriminator forests need this
    /// because some of their leaves contain only synthetic rows.
    Forest pruned_to(const Table& reference) const {
        if (reference.rows() == 0) throw Error("forest", "cannot prune against an empty reference");
        Forest f = *this;
        f.inbag_.clear();
        for (std::size_t b = 0; b < trees_.size(); ++b) {
            const auto& old = trees_[b].nodes();
            std::vector<std::size_t> reach(old.size(), 0);
            for (std::size_t i = 0; i < reference.rows(); ++i) {
                auto x = reference.row(i);
                std::size_t k = 0;
                for (;;) {
                    ++reach[k];
                    if (old[k].is_leaf()) break;
                    k = static_cast<std::size_t>(old[k].split.goes_left(x) ? old[k].left : old[k].right);
                }
            }
            std::vector<Node> out;
            int next_leaf = 0;
            auto rebuild = [&](auto&& self, std::size_t k) -> int {
                if (old[k].is_leaf()) {
                    Node nd = old[k];
                    nd.leaf = next_leaf++;
                    nd.count = reach[k];
                    out.push_back(std::move(nd));
                    return static_cast<int>(out.size() - 1);
                }
                const auto l = static_cast<std::size_t>(old[k].left), r = static_cast<std::size_t>(old[k].right);
                if (reach[l] == 0) return self(self, r);
                if (reach[r] == 0) return self(self, l);
                const int me = static_cast<int>(out.size());
                out.push_back(Node::internal(old[k].split, -1, -1));
                out.back().count = reach[k];
                const int lc = self(self, l);
                const int rc = self(self, r);
                out[static_cast<std::size_t>(me)].left = lc;
                out[static_cast<std::size_t>(me)].right = rc;
                return me;
            };
            rebuild(rebuild, 0);  // the first node emitted is the new root
            f.trees_[b] = Tree(std::move(out));
        }
        f.finish();
        return f;
    }

    std::string serialize() const { return to_json().dump(); }

    bool operator==(const Forest& o) const { return serialize() == o.serialize(); }

    static std::vector<std::pair<double, double>> compute_ranges(const Table& t) {
        std::vector<std::pair<double, double>> r(t.cols());
        for (std::size_t j = 0; j < t.cols(); ++j) {
            if (t.schema()[j].categorical()) {
                r[j] = {0.0, static_cast<double>(t.schema()[j].levels.size() - 1)};
                continue;
            }
            if (t.rows() == 0) throw Error("forest", "cannot compute feature ranges of an empty table");
            double lo = t(0, j), hi = t(0, j);
            for (std::size_t i = 1; i < t.rows(); ++i) {
                lo = std::min(lo, t(i, j));
                hi = std::max(hi, t(i, j));
            }
            r[j] = {lo, hi};
        }
        return r;
    }

private:
    friend Forest grow_forest_impl(const Table&, const Labels*, const ForestParams&, bool);

    void finish() {
        offsets_.assign(trees_.size() + 1, 0);
        for (std::size_t b = 0; b < trees_.size(); ++b) offsets_[b + 1] = offsets_[b] + trees_[b].leaf_count();
        check_paths();
    }

    /// Reject trees whose root-to-leaf constraints contradict each other
    /// (e.g. x=A followed by x!=A), evaluated without range clipping.
    void check_paths() const {
        for (const auto& t : trees_) {
            struct Item {
                std::size_t node;
                Region region;
            };
            std::vector<Bound> open(schema_.size());
            for (std::size_t j = 0; j < schema_.size(); ++j)
                if (schema_[j].categorical()) open[j].levels.assign(schema_[j].levels.size(), 1);
            std::vector<Item> stack{{0, Region(open)}};
            while (!stack.empty()) {
                Item it = std::move(stack.back());
                stack.pop_back();
                if (it.region.empty()) throw Error("forest", "contradictory split path in tree");
                const Node& nd = t.nodes()[it.node];
                if (nd.is_leaf()) continue;
                if (nd.split.feature >= schema_.size()) throw Error("forest", "split feature out of range");
                const bool cat = schema_[nd.split.feature].categorical();
                if (cat != (nd.split.kind == SplitRule::Kind::Equals))
                    throw Error("forest", "split kind does not match column kind");
                if (cat && nd.split.level >= schema_[nd.split.feature].levels.size())
                    throw Error("forest", "split level out of range");
                Region l = it.region, r = std::move(it.region);
                apply_split(nd.split, l, r);
                stack.push_back({static_cast<std::size_t>(nd.right), std::move(r)});
                stack.push_back({static_cast<std::size_t>(nd.left), std::move(l)});
            }
        }
    }

public:
    /// Narrow `left` and `right` by the split's two outcomes.
    static void apply_split(const SplitRule& s, Region& left, Region& right) {
        if (s.kind == SplitRule::Kind::LessThan) {
            Bound& bl = left[s.feature];
            if (s.threshold < bl.hi || (s.threshold == bl.hi && bl.hi_closed)) {
                bl.hi = s.threshold;
                bl.hi_closed = false;
            }
            Bound& br = right[s.feature];
            br.lo = std::max(br.lo, s.threshold);
        } else {
            Bound& bl = left[s.feature];
            for (std::size_t l = 0; l < bl.levels.size(); ++l)
                if (l != s.level) bl.levels[l] = 0;
            right[s.feature].levels[s.level] = 0;
        }
    }

private:
    Schema schema_;
    ForestParams params_;
    std::vector<Tree> trees_;
    std::vector<std::pair<double, double>> ranges_;
    std::vector<std::size_t> offsets_;
    std::size_t label_classes_ = 0;
    bool has_labels_ = false;
    std::vector<std::vector<std::uint32_t>> inbag_;
};

/// Route one row through every tree.
inline LeafAssignment route(const Forest& forest, std::span<const double> x, RouteWarnings* warn = nullptr) {
    return forest.route(x, warn);
}

/// n x B matrix of leaf ids, row-major.
struct LeafMatrix {
    std::size_t rows = 0;
    std::size_t trees = 0;
    std::vector<std::uint32_t> ids;

    std::uint32_t operator()(std::size_t i, std::size_t b) const { return ids[i * trees + b]; }
    std::span<const std::uint32_t> row(std::size_t i) const { return {ids.data() + i * trees, trees}; }
};

inline LeafMatrix route_table(const Forest& forest, const Table& table, RouteWarnings* warn = nullptr,
                              std::size_t jobs = 1) {
    LeafMatrix m{table.rows(), forest.size(), std::vector<std::uint32_t>(table.rows() * forest.size())};
    std::vector<RouteWarnings> w(table.rows());
    parallel_for(table.rows(), jobs, [&](std::size_t i) {
        auto a = forest.route(table.row(i), &w[i]);
        std::copy(a.leaves.begin(), a.leaves.end(), m.ids.begin() + static_cast<std::ptrdiff_t>(i * m.trees));
    });
    if (warn)
        for (const auto& x : w) warn->unseen_levels += x.unseen_levels;
    return m;
}

/// Regions of all leaves of one tree, indexed by leaf id. Unconstrained
/// continuous dimensions are clipped to the forest's training ranges.
inline std::vector<Region> tree_leaf_regions(const Forest& forest, std::size_t b) {
    const Tree& t = forest.tree(b);
    std::vector<Region> out(t.leaf_count());
    struct Item {
        std::size_t node;
        Region region;
    };
    std::vector<Item> stack{{0, Region::full(forest.schema(), forest.feature_ranges())}};
    while (!stack.empty()) {
        Item it = std::move(stack.back());
        stack.pop_back();
        const Node& nd = t.nodes()[it.node];
        if (nd.is_leaf()) {
            out[static_cast<std::size_t>(nd.leaf)] = std::move(it.region);
            continue;
        }
        Region l = it.region, r = std::move(it.region);
        Forest::apply_split(nd.split, l, r);
        stack.push_back({static_cast<std::size_t>(nd.right), std::move(r)});
        stack.push_back({static_cast<std::size_t>(nd.left), std::move(l)});
    }
    return out;
}

/// Intersection of the split conditions on the path to `leaf` of tree `b`.
inline Region leaf_region(const Forest& forest, std::size_t b, std::size_t leaf) {
    if (b >= forest.size() || leaf >= forest.tree(b).leaf_count()) throw Error("forest", "leaf index out of range");
    return tree_leaf_regions(forest, b)[leaf];
}

/// All leaf regions of a forest, precomputed for decoders.
class LeafRegions {
public:
    LeafRegions() = default;
    explicit LeafRegions(const Forest& forest) {
        regions_.resize(forest.size());
        for (std::size_t b = 0; b < forest.size(); ++b) regions_[b] = tree_leaf_regions(forest, b);
    }
    explicit LeafRegions(std::vector<std::vector<Region>> regions) : regions_(std::move(regions)) {}

    const Region& operator()(std::size_t b, std::size_t leaf) const { return regions_[b][leaf]; }
    std::size_t trees() const { return regions_.size(); }
    std::size_t leaves(std::size_t b) const { return regions_[b].size(); }

    /// Maximum compatible rule: intersection of the assigned leaf regions.
    Region intersect(const LeafAssignment& a) const {
        Region out = regions_[0][a.leaves[0]];
        for (std::size_t b = 1; b < regions_.size(); ++b) out.intersect(regions_[b][a.leaves[b]]);
        return out;
    }

private:
    std::vector<std::vector<Region>> regions_;
};

namespace detail {

enum class SplitMode { Cart, Random };

struct GrowContext {
    const Table* x = nullptr;
    const Labels* y = nullptr;  // null for label-free growth
    const ForestParams* params = nullptr;
    SplitMode mode = SplitMode::Cart;
    std::size_t mtry = 1;
};

class TreeGrower {
public:
    TreeGrower(const GrowContext& ctx, Rng& rng) : ctx_(ctx), rng_(rng) {}

    Tree grow(std::vector<std::uint32_t> split_idx, std::vector<std::uint32_t> label_idx) {
        nodes_.clear();
        next_leaf_ = 0;
        build(std::move(split_idx), std::move(label_idx), 0);
        return Tree(std::move(nodes_));
    }

private:
    struct Candidate {
        SplitRule rule;
        double score = -std::numeric_limits<double>::infinity();
        bool valid = false;
    };

    const Table& X() const { return *ctx_.x; }

    std::size_t min_child(std::size_t m) const {
        std::size_t c = ctx_.params->min_leaf_size;
        if (ctx_.params->min_node_fraction) {
            const auto g = static_cast<std::size_t>(std::ceil(*ctx_.params->min_node_fraction * static_cast<double>(m) - 1e-12));
            c = std::max(c, g);
        }
        return std::max<std::size_t>(c, 1);
    }

    bool pure(const std::vector<std::uint32_t>& idx) const {
        if (!ctx_.y) return false;
        const auto& v = ctx_.y->values;
        for (auto i : idx)
            if (v[i] != v[idx.front()]) return false;
        return true;
    }

    int make_leaf(const std::vector<std::uint32_t>& label_idx) {
        Node nd;
        nd.leaf = next_leaf_++;
        nd.count = label_idx.size();
        if (ctx_.y) {
            const auto& v = ctx_.y->values;
            if (ctx_.y->classification()) {
                nd.stat.assign(ctx_.y->classes, 0.0);
                for (auto i : label_idx) nd.stat[static_cast<std::size_t>(v[i])] += 1.0;
                for (auto& s : nd.stat) s /= static_cast<double>(label_idx.size());
            } else {
                double s = 0.0;
                for (auto i : label_idx) s += v[i];
                nd.stat = {s / static_cast<double>(label_idx.size())};
            }
        }
        nodes_.push_back(std::move(nd));
        return static_cast<int>(nodes_.size() - 1);
    }

    /// Honest growth also requires both children to keep labeling samples.
    bool label_ok(const SplitRule& r, const std::vector<std::uint32_t>& label_idx, bool honest) const {
        if (!honest) return true;
        std::size_t left = 0;
        for (auto i : label_idx) left += r.goes_left(X().row(i)) ? 1 : 0;
        return left > 0 && left < label_idx.size();
    }

    Candidate best_cart(const std::vector<std::uint32_t>& idx, const std::vector<std::uint32_t>& label_idx) {
        const std::size_t d = X().cols();
        const std::size_t m = idx.size();
        const std::size_t minc = min_child(m);
        const bool honest = ctx_.params->honest;
        const auto& yv = ctx_.y->values;
        const bool cls = ctx_.y->classification();
        const std::size_t k = ctx_.y->classes;

        double parent = 0.0;
        std::vector<double> tot(cls ? k : 1, 0.0);
        for (auto i : idx) {
            if (cls) tot[static_cast<std::size_t>(yv[i])] += 1.0;
            else tot[0] += yv[i];
        }
        if (cls) {
            for (double c : tot) parent += c * c;
            parent /= static_cast<double>(m);
        } else {
            parent = tot[0] * tot[0] / static_cast<double>(m);
        }

        Candidate best;
        auto features = rng_.sample_without_replacement(d, ctx_.mtry);
        std::vector<std::pair<double, double>> vals(m);
        std::vector<double> lstat(tot.size());
        for (std::size_t f : features) {
            const Column& col = X().schema()[f];
            if (!col.categorical()) {
                for (std::size_t t = 0; t < m; ++t) vals[t] = {X()(idx[t], f), yv[idx[t]]};
                std::sort(vals.begin(), vals.end());
                if (vals.front().first == vals.back().first) continue;
                std::fill(lstat.begin(), lstat.end(), 0.0);
                std::vector<double> label_x;
                if (honest) {
                    for (auto i : label_idx) label_x.push_back(X()(i, f));
                    std::sort(label_x.begin(), label_x.end());
                }
                for (std::size_t p = 1; p < m; ++p) {
                    if (cls) lstat[static_cast<std::size_t>(vals[p - 1].second)] += 1.0;
                    else lstat[0] += vals[p - 1].second;
                    if (vals[p - 1].first == vals[p].first) continue;
                    if (p < minc || m - p < minc) continue;
                    double thr = 0.5 * (vals[p - 1].first + vals[p].first);
                    if (!(thr > vals[p - 1].first)) thr = vals[p].first;
                    if (honest) {
                        auto nl = static_cast<std::size_t>(std::lower_bound(label_x.begin(), label_x.end(), thr) - label_x.begin());
                        if (nl == 0 || nl == label_x.size()) continue;
                    }
                    const double nl = static_cast<double>(p), nr = static_cast<double>(m - p);
                    double score = 0.0;
                    if (cls) {
                        for (std::size_t c = 0; c < k; ++c) {
                            const double r = tot[c] - lstat[c];
                            score += lstat[c] * lstat[c] / nl + r * r / nr;
                        }
                    } else {
                        const double r = tot[0] - lstat[0];
                        score = lstat[0] * lstat[0] / nl + r * r / nr;
                    }
                    if (score > best.score) {
                        best.score = score;
                        best.rule = SplitRule::less_than(f, thr);
                        best.valid = true;
                    }
                }
            } else {
                const std::size_t levels = col.levels.size();
                std::vector<double> cnt(levels, 0.0);
                std::vector<double> st(levels * tot.size(), 0.0);
                for (auto i : idx) {
                    const auto l = static_cast<std::size_t>(X()(i, f));
                    cnt[l] += 1.0;
                    if (cls) st[l * k + static_cast<std::size_t>(yv[i])] += 1.0;
                    else st[l] += yv[i];
                }
                for (std::size_t l = 0; l < levels; ++l) {
                    const auto p = static_cast<std::size_t>(cnt[l]);
                    if (p == 0 || p == m || p < minc || m - p < minc) continue;
                    const SplitRule rule = SplitRule::equals(f, l);
                    if (!label_ok(rule, label_idx, honest)) continue;
                    const double nl = cnt[l], nr = static_cast<double>(m) - cnt[l];
                    double score = 0.0;
                    if (cls) {
                        for (std::size_t c = 0; c < k; ++c) {
                            const double a = st[l * k + c], r = tot[c] - a;
                            score += a * a / nl + r * r / nr;
                        }
                    } else {
                        const double a = st[l], r = tot[0] - a;
                        score = a * a / nl + r * r / nr;
                    }
                    if (score > best.score) {
                        best.score = score;
                        best.rule = rule;
                        best.valid = true;
                    }
                }
            }
        }
        if (best.valid && !(best.score - parent > 1e-12 * std::max(1.0, std::abs(parent)))) best.valid = false;
        return best;
    }

    Candidate random_split(const std::vector<std::uint32_t>& idx, const std::vector<std::uint32_t>& label_idx) {
        const std::size_t d = X().cols();
        const std::size_t m = idx.size();
        const std::size_t minc = min_child(m);
        std::vector<std::size_t> usable;
        std::vector<std::pair<double, double>> range(d);
        for (std::size_t f = 0; f < d; ++f) {
            double lo = X()(idx[0], f), hi = lo;
            for (auto i : idx) {
                lo = std::min(lo, X()(i, f));
                hi = std::max(hi, X()(i, f));
            }
            range[f] = {lo, hi};
            if (lo < hi) usable.push_back(f);
        }
        Candidate c;
        if (usable.empty()) return c;
        for (int attempt = 0; attempt < 32; ++attempt) {
            const std::size_t f = usable[rng_.index(usable.size())];
            SplitRule rule;
            if (X().schema()[f].categorical()) {
                std::vector<std::size_t> present;
                std::vector<char> seen(X().schema()[f].levels.size(), 0);
                for (auto i : idx) seen[static_cast<std::size_t>(X()(i, f))] = 1;
                for (std::size_t l = 0; l < seen.size(); ++l)
                    if (seen[l]) present.push_back(l);
                rule = SplitRule::equals(f, present[rng_.index(present.size())]);
            } else {
                const double t = rng_.uniform(range[f].first, range[f].second);
                if (!(t > range[f].first)) continue;
                rule = SplitRule::less_than(f, t);
            }
            std::size_t left = 0;
            for (auto i : idx) left += rule.goes_left(X().row(i)) ? 1 : 0;
            if (left < minc || m - left < minc) continue;
            if (!label_ok(rule, label_idx, ctx_.params->honest)) continue;
            c.rule = rule;
            c.valid = true;
            return c;
        }
        return c;
    }

    int build(std::vector<std::uint32_t> idx, std::vector<std::uint32_t> label_idx, std::size_t depth) {
        const auto& p = *ctx_.params;
        const std::size_t m = idx.size();
        const bool depth_cap = p.max_depth && depth >= *p.max_depth;
        if (depth_cap || m < 2 * min_child(m) || m < 2 || pure(idx)) return make_leaf(label_idx);
        Candidate c = ctx_.mode == SplitMode::Cart ? best_cart(idx, label_idx) : random_split(idx, label_idx);
        if (!c.valid) return make_leaf(label_idx);

        std::vector<std::uint32_t> li, ri, lli, rli;
        for (auto i : idx) (c.rule.goes_left(X().row(i)) ? li : ri).push_back(i);
        if (p.honest) {
            for (auto i : label_idx) (c.rule.goes_left(X().row(i)) ? lli : rli).push_back(i);
        }
        idx.clear();
        idx.shrink_to_fit();

        const int self = static_cast<int>(nodes_.size());
        Node nd;
        nd.split = c.rule;
        nd.count = m;
        nodes_.push_back(nd);
        int l, r;
        if (p.honest) {
            l = build(std::move(li), std::move(lli), depth + 1);
            r = build(std::move(ri), std::move(rli), depth + 1);
        } else {
            auto lcopy = li;
            auto rcopy = ri;
            l = build(std::move(li), std::move(lcopy), depth + 1);
            r = build(std::move(ri), std::move(rcopy), depth + 1);
        }
        nodes_[static_cast<std::size_t>(self)].left = l;
        nodes_[static_cast<std::size_t>(self)].right = r;
        return self;
    }

    const GrowContext& ctx_;
    Rng& rng_;
    std::vector<Node> nodes_;
    int next_leaf_ = 0;
};

}  // namespace detail

inline Forest grow_forest_impl(const Table& table, const Labels* labels, const ForestParams& params, bool random_splits) {
    params.validate();
    const std::size_t n = table.rows();
    if (n < 2) throw Error("forest", "fitting needs at least 2 rows");
    if (table.cols() == 0) throw Error("forest", "fitting needs at least one feature");
    if (labels) {
        if (labels->values.size() != n) throw Error("forest", "label length does not match row count");
        if (labels->classification())
            for (double v : labels->values)
                if (v < 0 || v >= static_cast<double>(labels->classes) || v != std::floor(v))
                    throw Error("forest", "class label out of range");
    }

    Forest f;
    f.schema_ = table.schema();
    f.params_ = params;
    f.ranges_ = Forest::compute_ranges(table);
    f.has_labels_ = labels != nullptr;
    f.label_classes_ = labels ? labels->classes : 0;
    f.trees_.resize(params.n_trees);
    f.inbag_.resize(params.n_trees);

    detail::GrowContext ctx;
    ctx.x = &table;
    ctx.y = labels;
    ctx.params = &params;
    ctx.mode = random_splits ? detail::SplitMode::Random : detail::SplitMode::Cart;
    const std::size_t d = table.cols();
    ctx.mtry = params.mtry == 0 ? std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(d)))))
                                : std::min(params.mtry, d);

    const auto sample_size =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(params.subsample_fraction * static_cast<double>(n) - 1e-9)));
    if (params.honest && sample_size < 2) throw Error("forest", "honest trees need at least 2 sampled rows");

    parallel_for(params.n_trees, params.jobs, [&](std::size_t b) {
        Rng rng(derive_seed(params.seed, b));
        std::vector<std::uint32_t> sample;
        sample.reserve(sample_size);
        if (params.sampling == Sampling::Bootstrap) {
            for (std::size_t s = 0; s < sample_size; ++s) sample.push_back(static_cast<std::uint32_t>(rng.index(n)));
        } else if (sample_size == n) {
            for (std::size_t s = 0; s < n; ++s) sample.push_back(static_cast<std::uint32_t>(s));
        } else {
            for (auto s : rng.sample_without_replacement(n, sample_size)) sample.push_back(static_cast<std::uint32_t>(s));
        }
        std::vector<std::uint32_t> split_idx, label_idx;
        if (params.honest) {
            rng.shuffle(sample);
            const std::size_t half = sample.size() / 2;
            split_idx.assign(sample.begin(), sample.begin() + static_cast<std::ptrdiff_t>(half));
            label_idx.assign(sample.begin() + static_cast<std::ptrdiff_t>(half), sample.end());
        } else {
            split_idx = sample;
            label_idx = sample;
        }
        std::vector<std::uint32_t> uniq = sample;
        std::sort(uniq.begin(), uniq.end());
        uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
        f.inbag_[b] = std::move(uniq);

        detail::TreeGrower grower(ctx, rng);
        f.trees_[b] = grower.grow(std::move(split_idx), std::move(label_idx));
    });
    f.finish();
    return f;
}

/// CART forest: variance reduction for regression labels, Gini for classes.
inline Forest fit_supervised(const Table& table, const Labels& labels, ForestParams params) {
    return grow_forest_impl(table, &labels, params, false);
}

/// Splits on a uniformly random feature at a uniformly random cut within the
/// node's observed range. Labels are not used.
inline Forest fit_completely_random(const Table& table, ForestParams params) {
    return grow_forest_impl(table, nullptr, params, true);
}

/// Real rows labelled 1 stacked over marginal synthetic rows labelled 0.
struct DiscriminationSet {
    Table data;
    Labels labels;
};

inline DiscriminationSet discrimination_set(const Table& real, const Table& synthetic) {
    std::vector<double> y(real.rows() + synthetic.rows(), 0.0);
    std::fill(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(real.rows()), 1.0);
    return {Table::vstack(real, synthetic), Labels::classes_of(std::move(y), 2)};
}

/// Seed used for the first round's marginal synthesis.
inline std::uint64_t synthesis_seed(std::uint64_t forest_seed, std::size_t round) {
    return derive_seed(forest_seed ^ 0x5a17ULL, round);
}

/// Draw synthetic rows from a fitted forest: pick a tree and a random real
/// row's leaf in it, then fill each column independently from random real
/// rows sharing that leaf (product of within-leaf marginals).
inline Table resample_within_leaves(const Forest& forest, const Table& real, std::uint64_t seed) {
    const std::size_t n = real.rows(), d = real.cols();
    const LeafMatrix leaves = route_table(forest, real);
    std::vector<std::vector<std::vector<std::uint32_t>>> members(forest.size());
    for (std::size_t b = 0; b < forest.size(); ++b) {
        members[b].resize(forest.tree(b).leaf_count());
        for (std::size_t i = 0; i < n; ++i) members[b][leaves(i, b)].push_back(static_cast<std::uint32_t>(i));
    }
    Rng rng(seed);
    std::vector<double> out(n * d);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t b = rng.index(forest.size());
        const auto& pool = members[b][leaves(rng.index(n), b)];
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] = real(pool[rng.index(pool.size())], j);
    }
    return Table(real.schema(), std::move(out));
}

/// Discriminator forest: real vs. marginal-synthetic rows. With rounds > 1
/// the synthetic rows are regenerated inside the current forest's leaves and
/// the forest refit.
inline Forest fit_unsupervised(const Table& table, ForestParams params, std::size_t rounds = 1) {
    if (table.rows() < 2) throw Error("forest", "fit_unsupervised needs n >= 2");
    if (rounds == 0) throw Error("forest", "rounds must be at least 1");
    Table synth = marginal_synthesize(table, synthesis_seed(params.seed, 0));
    Forest f;
    for (std::size_t r = 0; r < rounds; ++r) {
        if (r > 0) synth = resample_within_leaves(f, table, synthesis_seed(params.seed, r));
        auto ds = discrimination_set(table, synth);
        f = fit_supervised(ds.data, ds.labels, params);
    }
    return f;
}

/// Regression: mean of leaf means. Classification: mean of leaf class
/// frequency vectors.
struct Prediction {
    double value = 0.0;
    std::vector<double> probabilities;

    std::size_t argmax() const {
        return static_cast<std::size_t>(std::max_element(probabilities.begin(), probabilities.end()) - probabilities.begin());
    }
};

inline Prediction predict(const Forest& forest, std::span<const double> x) {
    if (!forest.has_labels()) throw Error("forest", "forest was grown without labels");
    Prediction p;
    const auto a = forest.route(x);
    const double inv_b = 1.0 / static_cast<double>(forest.size());
    if (forest.label_classes() > 0) p.probabilities.assign(forest.label_classes(), 0.0);
    for (std::size_t b = 0; b < forest.size(); ++b) {
        const auto& st = forest.tree(b).nodes()[forest.tree(b).leaf_node(a.leaves[b])].stat;
        if (forest.label_classes() > 0) {
            for (std::size_t c = 0; c < st.size(); ++c) p.probabilities[c] += st[c] * inv_b;
        } else {
            p.value += st[0] * inv_b;
        }
    }
    return p;
}

/// Out-of-bag predictions for the rows the forest was fitted on. Rows that
/// are in-bag for every tree get an empty probability vector / NaN value.
inline std::vector<Prediction> oob_predict(const Forest& forest, const Table& training) {
    if (forest.inbag().size() != forest.size()) throw Error("forest", "in-bag records unavailable (forest was loaded)");
    const std::size_t n = training.rows();
    std::vector<std::vector<char>> in(forest.size(), std::vector<char>(n, 0));
    for (std::size_t b = 0; b < forest.size(); ++b)
        for (auto i : forest.inbag()[b]) in[b][i] = 1;
    std::vector<Prediction> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto a = forest.route(training.row(i));
        std::size_t used = 0;
        Prediction p;
        if (forest.label_classes() > 0) p.probabilities.assign(forest.label_classes(), 0.0);
        for (std::size_t b = 0; b < forest.size(); ++b) {
            if (in[b][i]) continue;
            ++used;
            const auto& st = forest.tree(b).nodes()[forest.tree(b).leaf_node(a.leaves[b])].stat;
            if (forest.label_classes() > 0)
                for (std::size_t c = 0; c < st.size(); ++c) p.probabilities[c] += st[c];
            else
                p.value += st[0];
        }
        if (used == 0) {
            p.probabilities.clear();
            p.value = std::numeric_limits<double>::quiet_NaN();
        } else {
            for (auto& v : p.probabilities) v /= static_cast<double>(used);
            p.value /= static_cast<double>(used);
        }
        out[i] = std::move(p);
    }
    return out;
}

/// OOB classification accuracy over rows with at least one OOB tree.
inline double oob_accuracy(const Forest& forest, const Table& training, const Labels& labels) {
    const auto preds = oob_predict(forest, training);
    std::size_t hit = 0, total = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i].probabilities.empty()) continue;
        ++total;
        hit += static_cast<double>(preds[i].argmax()) == labels.values[i] ? 1 : 0;
    }
    if (total == 0) throw Error("forest", "no out-of-bag rows");
    return static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace rfae

#include "gaqp/crossmatch.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace gaqp {

namespace {

/// Edmonds' primal-dual blossom algorithm for maximum-weight general matching, O(V^3).
/// Endpoint `p` of edge k is vertex endpoint[p]; p = 2k is the edge's first vertex, p = 2k+1 its second.
class BlossomMatcher
{
public:
    BlossomMatcher(std::size_t nv, std::span<const WeightedEdge> edges, bool max_cardinality)
        : nv_(static_cast<long>(nv))
        , edges_(edges.begin(), edges.end())
        , maxcard_(max_cardinality)
    {
        const long ne = static_cast<long>(edges_.size());
        std::int64_t maxweight = 0;
        for (const auto &e : edges_)
            maxweight = std::max(maxweight, e.weight);
        endpoint_.resize(2 * ne);
        for (long p = 0; p != 2 * ne; ++p)
            endpoint_[p] = static_cast<long>(p % 2 == 0 ? edges_[p / 2].u : edges_[p / 2].v);
        neighbend_.assign(nv_, {});
        for (long k = 0; k != ne; ++k) {
            neighbend_[edges_[k].u].push_back(2 * k + 1);
            neighbend_[edges_[k].v].push_back(2 * k);
        }
        mate_.assign(nv_, -1);
        label_.assign(2 * nv_, 0);
        labelend_.assign(2 * nv_, -1);
        inblossom_.resize(nv_);
        std::iota(inblossom_.begin(), inblossom_.end(), 0L);
        blossomparent_.assign(2 * nv_, -1);
        blossomchilds_.assign(2 * nv_, {});
        blossombase_.resize(2 * nv_);
        for (long i = 0; i != 2 * nv_; ++i)
            blossombase_[i] = i < nv_ ? i : -1;
        blossomendps_.assign(2 * nv_, {});
        bestedge_.assign(2 * nv_, -1);
        blossombestedges_.assign(2 * nv_, {});
        has_bestedges_.assign(2 * nv_, false);
        for (long b = 2 * nv_ - 1; b >= nv_; --b)
            unused_.push_back(b);
        dualvar_.assign(2 * nv_, 0);
        for (long v = 0; v != nv_; ++v)
            dualvar_[v] = maxweight;
        allowedge_.assign(ne, false);
    }

    std::vector<long> solve()
    {
        for (long stage = 0; stage != nv_; ++stage) {
            std::fill(label_.begin(), label_.end(), 0);
            std::fill(bestedge_.begin(), bestedge_.end(), -1);
            for (long b = nv_; b != 2 * nv_; ++b) {
                blossombestedges_[b].clear();
                has_bestedges_[b] = false;
            }
            std::fill(allowedge_.begin(), allowedge_.end(), false);
            queue_.clear();
            for (long v = 0; v != nv_; ++v)
                if (mate_[v] == -1 && label_[inblossom_[v]] == 0)
                    assign_label(v, 1, -1);

            bool augmented = false;
            while (true) {
                while (!queue_.empty() && !augmented) {
                    const long v = queue_.back();
                    queue_.pop_back();
                    for (long p : neighbend_[v]) {
                        const long k = p / 2;
                        const long w = endpoint_[p];
                        if (inblossom_[v] == inblossom_[w])
                            continue;
                        std::int64_t kslack = 0;
                        if (!allowedge_[k]) {
                            kslack = slack(k);
                            if (kslack <= 0)
                                allowedge_[k] = true;
                        }
                        if (allowedge_[k]) {
                            if (label_[inblossom_[w]] == 0) {
                                assign_label(w, 2, p ^ 1);
                            } else if (label_[inblossom_[w]] == 1) {
                                const long base = scan_blossom(v, w);
                                if (base >= 0) {
                                    add_blossom(base, k);
                                } else {
                                    augment_matching(k);
                                    augmented = true;
                                    break;
                                }
                            } else if (label_[w] == 0) {
                                label_[w] = 2;
                                labelend_[w] = p ^ 1;
                            }
                        } else if (label_[inblossom_[w]] == 1) {
                            const long b = inblossom_[v];
                            if (bestedge_[b] == -1 || kslack < slack(bestedge_[b]))
                                bestedge_[b] = k;
                        } else if (label_[w] == 0) {
                            if (bestedge_[w] == -1 || kslack < slack(bestedge_[w]))
                                bestedge_[w] = k;
                        }
                    }
                }
                if (augmented)
                    break;

                int deltatype = -1;
                std::int64_t delta = 0;
                long deltaedge = -1;
                long deltablossom = -1;
                if (!maxcard_) {
                    deltatype = 1;
                    delta = *std::min_element(dualvar_.begin(), dualvar_.begin() + nv_);
                }
                for (long v = 0; v != nv_; ++v) {
                    if (label_[inblossom_[v]] == 0 && bestedge_[v] != -1) {
                        const auto d = slack(bestedge_[v]);
                        if (deltatype == -1 || d < delta) {
                            delta = d;
                            deltatype = 2;
                            deltaedge = bestedge_[v];
                        }
                    }
                }
                for (long b = 0; b != 2 * nv_; ++b) {
                    if (blossomparent_[b] == -1 && label_[b] == 1 && bestedge_[b] != -1) {
                        const auto kslack = slack(bestedge_[b]);
                        assert(kslack % 2 == 0);
                        const auto d = kslack / 2;
                        if (deltatype == -1 || d < delta) {
                            delta = d;
                            deltatype = 3;
                            deltaedge = bestedge_[b];
                        }
                    }
                }
                for (long b = nv_; b != 2 * nv_; ++b) {
                    if (blossombase_[b] >= 0 && blossomparent_[b] == -1 && label_[b] == 2 &&
                        (deltatype == -1 || dualvar_[b] < delta)) {
                        delta = dualvar_[b];
                        deltatype = 4;
                        deltablossom = b;
                    }
                }
                if (deltatype == -1) {
                    deltatype = 1;
                    delta = std::max<std::int64_t>(0, *std::min_element(dualvar_.begin(), dualvar_.begin() + nv_));
                }

                for (long v = 0; v != nv_; ++v) {
                    if (label_[inblossom_[v]] == 1)
                        dualvar_[v] -= delta;
                    else if (label_[inblossom_[v]] == 2)
                        dualvar_[v] += delta;
                }
                for (long b = nv_; b != 2 * nv_; ++b) {
                    if (blossombase_[b] >= 0 && blossomparent_[b] == -1) {
                        if (label_[b] == 1)
                            dualvar_[b] += delta;
                        else if (label_[b] == 2)
                            dualvar_[b] -= delta;
                    }
                }

                if (deltatype == 1) {
                    break;
                } else if (deltatype == 2) {
                    allowedge_[deltaedge] = true;
                    long i = static_cast<long>(edges_[deltaedge].u);
                    long j = static_cast<long>(edges_[deltaedge].v);
                    if (label_[inblossom_[i]] == 0)
                        std::swap(i, j);
                    queue_.push_back(i);
                } else if (deltatype == 3) {
                    allowedge_[deltaedge] = true;
                    queue_.push_back(static_cast<long>(edges_[deltaedge].u));
                } else {
                    expand_blossom(deltablossom, false);
                }
            }
            if (!augmented)
                break;
            for (long b = nv_; b != 2 * nv_; ++b)
                if (blossomparent_[b] == -1 && blossombase_[b] >= 0 && label_[b] == 1 && dualvar_[b] == 0)
                    expand_blossom(b, true);
        }
        std::vector<long> mate(nv_, -1);
        for (long v = 0; v != nv_; ++v)
            if (mate_[v] >= 0)
                mate[v] = endpoint_[mate_[v]];
        return mate;
    }

private:
    std::int64_t slack(long k) const
    {
        const auto &e = edges_[k];
        return dualvar_[e.u] + dualvar_[e.v] - 2 * e.weight;
    }

    void blossom_leaves(long b, std::vector<long> &out) const
    {
        if (b < nv_) {
            out.push_back(b);
            return;
        }
        for (long t : blossomchilds_[b])
            blossom_leaves(t, out);
    }

    std::vector<long> leaves(long b) const
    {
        std::vector<long> out;
        blossom_leaves(b, out);
        return out;
    }

    void assign_label(long w, int t, long p)
    {
        const long b = inblossom_[w];
        label_[w] = label_[b] = t;
        labelend_[w] = labelend_[b] = p;
        bestedge_[w] = bestedge_[b] = -1;
        if (t == 1) {
            blossom_leaves(b, queue_);
        } else if (t == 2) {
            const long base = blossombase_[b];
            assign_label(endpoint_[mate_[base]], 1, mate_[base] ^ 1);
        }
    }

    long scan_blossom(long v, long w)
    {
        std::vector<long> path;
        long base = -1;
        while (v != -1 || w != -1) {
            long b = inblossom_[v];
            if (label_[b] & 4) {
                base = blossombase_[b];
                break;
            }
            path.push_back(b);
            label_[b] = 5;
            if (labelend_[b] == -1) {
                v = -1;
            } else {
                v = endpoint_[labelend_[b]];
                b = inblossom_[v];
                v = endpoint_[labelend_[b]];
            }
            if (w != -1)
                std::swap(v, w);
        }
        for (long b : path)
            label_[b] = 1;
        return base;
    }

    void add_blossom(long base, long k)
    {
        long v = static_cast<long>(edges_[k].u);
        long w = static_cast<long>(edges_[k].v);
        const long bb = inblossom_[base];
        long bv = inblossom_[v];
        long bw = inblossom_[w];
        const long b = unused_.back();
        unused_.pop_back();
        blossombase_[b] = base;
        blossomparent_[b] = -1;
        blossomparent_[bb] = b;
        auto &path = blossomchilds_[b];
        auto &endps = blossomendps_[b];
        path.clear();
        endps.clear();
        while (bv != bb) {
            blossomparent_[bv] = b;
            path.push_back(bv);
            endps.push_back(labelend_[bv]);
            v = endpoint_[labelend_[bv]];
            bv = inblossom_[v];
        }
        path.push_back(bb);
        std::reverse(path.begin(), path.end());
        std::reverse(endps.begin(), endps.end());
        endps.push_back(2 * k);
        while (bw != bb) {
            blossomparent_[bw] = b;
            path.push_back(bw);
            endps.push_back(labelend_[bw] ^ 1);
            w = endpoint_[labelend_[bw]];
            bw = inblossom_[w];
        }
        label_[b] = 1;
        labelend_[b] = labelend_[bb];
        dualvar_[b] = 0;
        for (long leaf : leaves(b)) {
            if (label_[inblossom_[leaf]] == 2)
                queue_.push_back(leaf);
            inblossom_[leaf] = b;
        }

        std::vector<long> bestedgeto(2 * nv_, -1);
        for (long child : path) {
            std::vector<std::vector<long>> nblists;
            if (!has_bestedges_[child]) {
                for (long leaf : leaves(child)) {
                    std::vector<long> list;
                    for (long p : neighbend_[leaf])
                        list.push_back(p / 2);
                    nblists.push_back(std::move(list));
                }
            } else {
                nblists.push_back(blossombestedges_[child]);
            }
            for (const auto &nblist : nblists) {
                for (long kk : nblist) {
                    long i = static_cast<long>(edges_[kk].u);
                    long j = static_cast<long>(edges_[kk].v);
                    if (inblossom_[j] == b)
                        std::swap(i, j);
                    const long bj = inblossom_[j];
                    if (bj != b && label_[bj] == 1 && (bestedgeto[bj] == -1 || slack(kk) < slack(bestedgeto[bj])))
                        bestedgeto[bj] = kk;
                }
            }
            blossombestedges_[child].clear();
            has_bestedges_[child] = false;
            bestedge_[child] = -1;
        }
        auto &best = blossombestedges_[b];
        best.clear();
        for (long kk : bestedgeto)
            if (kk != -1)
                best.push_back(kk);
        has_bestedges_[b] = true;
        bestedge_[b] = -1;
        for (long kk : best)
            if (bestedge_[b] == -1 || slack(kk) < slack(bestedge_[b]))
                bestedge_[b] = kk;
    }

    void expand_blossom(long b, bool endstage)
    {
        const auto childs = blossomchilds_[b];
        for (long s : childs) {
            blossomparent_[s] = -1;
            if (s < nv_) {
                inblossom_[s] = s;
            } else if (endstage && dualvar_[s] == 0) {
                expand_blossom(s, endstage);
            } else {
                for (long leaf : leaves(s))
                    inblossom_[leaf] = s;
            }
        }
        if (!endstage && label_[b] == 2) {
            const auto &ch = blossomchilds_[b];
            const auto &endps = blossomendps_[b];
            const long len = static_cast<long>(ch.size());
            auto at = [len](const std::vector<long> &v, long idx) { return v[((idx % len) + len) % len]; };
            const long entrychild = inblossom_[endpoint_[labelend_[b] ^ 1]];
            long j = static_cast<long>(std::find(ch.begin(), ch.end(), entrychild) - ch.begin());
            long jstep, endptrick;
            if (j & 1) {
                j -= len;
                jstep = 1;
                endptrick = 0;
            } else {
                jstep = -1;
                endptrick = 1;
            }
            long p = labelend_[b];
            while (j != 0) {
                label_[endpoint_[p ^ 1]] = 0;
                label_[endpoint_[at(endps, j - endptrick) ^ endptrick ^ 1]] = 0;
                assign_label(endpoint_[p ^ 1], 2, p);
                allowedge_[at(endps, j - endptrick) / 2] = true;
                j += jstep;
                p = at(endps, j - endptrick) ^ endptrick;
                allowedge_[p / 2] = true;
                j += jstep;
            }
            long bv = at(ch, j);
            label_[endpoint_[p ^ 1]] = label_[bv] = 2;
            labelend_[endpoint_[p ^ 1]] = labelend_[bv] = p;
            bestedge_[bv] = -1;
            j += jstep;
            while (at(ch, j) != entrychild) {
                bv = at(ch, j);
                if (label_[bv] == 1) {
                    j += jstep;
                    continue;
                }
                long found = -1;
                for (long leaf : leaves(bv)) {
                    if (label_[leaf] != 0) {
                        found = leaf;
                        break;
                    }
                }
                if (found != -1) {
                    label_[found] = 0;
                    label_[endpoint_[mate_[blossombase_[bv]]]] = 0;
                    assign_label(found, 2, labelend_[found]);
                }
                j += jstep;
            }
        }
        label_[b] = labelend_[b] = -1;
        blossomchilds_[b].clear();
        blossomendps_[b].clear();
        blossombase_[b] = -1;
        blossombestedges_[b].clear();
        has_bestedges_[b] = false;
        bestedge_[b] = -1;
        unused_.push_back(b);
    }

    void augment_blossom(long b, long v)
    {
        long t = v;
        while (blossomparent_[t] != b)
            t = blossomparent_[t];
        if (t >= nv_)
            augment_blossom(t, v);
        auto &ch = blossomchilds_[b];
        auto &endps = blossomendps_[b];
        const long len = static_cast<long>(ch.size());
        auto at = [len](const std::vector<long> &vec, long idx) { return vec[((idx % len) + len) % len]; };
        const long i = static_cast<long>(std::find(ch.begin(), ch.end(), t) - ch.begin());
        long j = i;
        long jstep, endptrick;
        if (i & 1) {
            j -= len;
            jstep = 1;
            endptrick = 0;
        } else {
            jstep = -1;
            endptrick = 1;
        }
        while (j != 0) {
            j += jstep;
            t = at(ch, j);
            const long p = at(endps, j - endptrick) ^ endptrick;
            if (t >= nv_)
                augment_blossom(t, endpoint_[p]);
            j += jstep;
            t = at(ch, j);
            if (t >= nv_)
                augment_blossom(t, endpoint_[p ^ 1]);
            mate_[endpoint_[p]] = p ^ 1;
            mate_[endpoint_[p ^ 1]] = p;
        }
        std::rotate(ch.begin(), ch.begin() + i, ch.end());
        std::rotate(endps.begin(), endps.begin() + i, endps.end());
        blossombase_[b] = blossombase_[ch[0]];
    }

    void augment_matching(long k)
    {
        const long v = static_cast<long>(edges_[k].u);
        const long w = static_cast<long>(edges_[k].v);
        const std::pair<long, long> starts[2] = {{v, 2 * k + 1}, {w, 2 * k}};
        for (auto [s, p] : starts) {
            while (true) {
                const long bs = inblossom_[s];
                if (bs >= nv_)
                    augment_blossom(bs, s);
                mate_[s] = p;
                if (labelend_[bs] == -1)
                    break;
                const long t = endpoint_[labelend_[bs]];
                const long bt = inblossom_[t];
                s = endpoint_[labelend_[bt]];
                const long j = endpoint_[labelend_[bt] ^ 1];
                if (bt >= nv_)
                    augment_blossom(bt, j);
                mate_[j] = labelend_[bt];
                p = labelend_[bt] ^ 1;
            }
        }
    }

    long nv_;
    std::vector<WeightedEdge> edges_;
    bool maxcard_;
    std::vector<long> endpoint_;
    std::vector<std::vector<long>> neighbend_;
    std::vector<long> mate_;
    std::vector<int> label_;
    std::vector<long> labelend_;
    std::vector<long> inblossom_;
    std::vector<long> blossomparent_;
    std::vector<std::vector<long>> blossomchilds_;
    std::vector<long> blossombase_;
    std::vector<std::vector<long>> blossomendps_;
    std::vector<long> bestedge_;
    std::vector<std::vector<long>> blossombestedges_;
    std::vector<bool> has_bestedges_;
    std::vector<long> unused_;
    std::vector<std::int64_t> dualvar_;
    std::vector<bool> allowedge_;
    std::vector<long> queue_;
};

/// Distances are quantized to this many levels of the largest distance.
constexpr double kQuantLevels = 1099511627776.0; // 2^40

double log_choose(double n, double k)
{
    return std::lgamma(n + 1) - std::lgamma(k + 1) - std::lgamma(n - k + 1);
}

} // namespace

std::vector<long> max_weight_matching(std::size_t num_vertices, std::span<const WeightedEdge> edges,
                                      bool max_cardinality)
{
    if (edges.empty())
        return std::vector<long>(num_vertices, -1);
    return BlossomMatcher(num_vertices, edges, max_cardinality).solve();
}

MatchingResult min_weight_perfect_matching(std::span<const double> dist, std::size_t n)
{
    if (n < 2 || n % 2 != 0)
        throw std::invalid_argument("perfect matching needs an even number of points, got " + std::to_string(n));
    if (dist.size() != n * n)
        throw std::invalid_argument("distance matrix must be N x N");
    double max_dist = 0.0;
    for (std::size_t i = 0; i != n; ++i)
        for (std::size_t j = i + 1; j != n; ++j) {
            const double d = dist[i * n + j];
            if (!std::isfinite(d) || d < 0)
                throw std::invalid_argument("distances must be finite and non-negative");
            if (d != dist[j * n + i])
                throw std::invalid_argument("distance matrix must be symmetric");
            max_dist = std::max(max_dist, d);
        }

    // Maximizing sum(C - w) over maximum-cardinality matchings minimizes sum(w) over perfect ones.
    // Weights are doubled so every slack stays even.
    const auto top = static_cast<std::int64_t>(kQuantLevels);
    std::vector<WeightedEdge> edges;
    edges.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i != n; ++i)
        for (std::size_t j = i + 1; j != n; ++j) {
            const double d = dist[i * n + j];
            const auto q = max_dist > 0 ? static_cast<std::int64_t>(std::llround(d / max_dist * kQuantLevels)) : 0;
            edges.push_back({i, j, 2 * (top - q)});
        }
    const auto mate = max_weight_matching(n, edges, true);

    MatchingResult result;
    for (std::size_t i = 0; i != n; ++i) {
        if (mate[i] < 0)
            throw std::logic_error("matching is not perfect");
        const auto j = static_cast<std::size_t>(mate[i]);
        if (i < j) {
            result.pairs.emplace_back(i, j);
            result.total_weight += dist[i * n + j];
        }
    }
    return result;
}

double crossmatch_null_log_pmf(std::size_t n, std::size_t n_d, std::size_t a)
{
    const auto ninf = -std::numeric_limits<double>::infinity();
    if (n % 2 != 0 || n_d > n)
        return ninf;
    const auto n_m = n - n_d;
    if (a > std::min(n_d, n_m) || (n_d - a) % 2 != 0)
        return ninf;
    const double pairs = static_cast<double>(n / 2);
    const double dd = static_cast<double>((n_d - a) / 2);
    const double mm = static_cast<double>((n_m - a) / 2);
    const double ad = static_cast<double>(a);
    return ad * std::log(2.0) + std::lgamma(pairs + 1) - log_choose(static_cast<double>(n), static_cast<double>(n_d)) -
           std::lgamma(dd + 1) - std::lgamma(ad + 1) - std::lgamma(mm + 1);
}

double crossmatch_null_pmf(std::size_t n, std::size_t n_d, std::size_t a)
{
    return std::exp(crossmatch_null_log_pmf(n, n_d, a));
}

double crossmatch_p_value(std::size_t n, std::size_t n_d, std::size_t a)
{
    double p = 0.0;
    for (std::size_t k = 0; k <= a; ++k)
        p += crossmatch_null_pmf(n, n_d, k);
    return std::min(1.0, p);
}

CrossMatchOutcome crossmatch_test(const PointSet &dataset_points, const PointSet &model_points, double alpha,
                                  std::uint64_t seed)
{
    if (dataset_points.empty() || model_points.empty())
        throw std::invalid_argument("cross-match test needs two non-empty samples");
    CrossMatchOutcome outcome;

    std::vector<const std::vector<double> *> points;
    for (const auto &p : dataset_points)
        points.push_back(&p);
    const std::size_t n_d = points.size();
    std::vector<std::size_t> model_index(model_points.size());
    std::iota(model_index.begin(), model_index.end(), std::size_t{0});
    if ((dataset_points.size() + model_points.size()) % 2 != 0) {
        std::mt19937_64 rng(seed);
        std::uniform_int_distribution<std::size_t> pick(0, model_points.size() - 1);
        const auto drop = pick(rng);
        outcome.dropped_model_point = drop;
        model_index.erase(model_index.begin() + static_cast<long>(drop));
    }
    for (auto i : model_index)
        points.push_back(&model_points[i]);
    const std::size_t n = points.size();
    if (n < 2)
        throw std::invalid_argument("cross-match test needs at least two points after pairing");

    std::vector<double> dist(n * n, 0.0);
    for (std::size_t i = 0; i != n; ++i)
        for (std::size_t j = i + 1; j != n; ++j) {
            const auto &a = *points[i];
            const auto &b = *points[j];
            double s = 0.0;
            for (std::size_t k = 0; k != a.size(); ++k)
                s += (a[k] - b[k]) * (a[k] - b[k]);
            dist[i * n + j] = dist[j * n + i] = std::sqrt(s);
        }
    const auto matching = min_weight_perfect_matching(dist, n);
    for (auto [i, j] : matching.pairs) {
        const bool di = i < n_d;
        const bool dj = j < n_d;
        if (di && dj)
            ++outcome.a_dd;
        else if (!di && !dj)
            ++outcome.a_mm;
        else
            ++outcome.a_dm;
    }
    outcome.p_value = crossmatch_p_value(n, n_d, outcome.a_dm);
    outcome.reject = outcome.p_value < alpha;
    return outcome;
}

} // namespace gaqp

#pragma once

// Reference implementations used only by tests. Each one takes a different route
// from the library code it checks.

#include "kgcal/graph.hpp"
#include "kgcal/model.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <vector>

namespace oracle {

// Central finite difference of f along coordinate i.
inline double central_diff(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
                           std::size_t i, double h = 1e-5)
{
    const double x0 = x[i];
    x[i] = x0 + h;
    const double up = f(x);
    x[i] = x0 - h;
    const double down = f(x);
    return (up - down) / (2.0 * h);
}

// Relative error with an absolute floor so that tiny gradients do not blow up.
inline double rel_err(double analytic, double numeric)
{
    return std::abs(analytic - numeric) / std::max(1.0, std::max(std::abs(analytic), std::abs(numeric)));
}

// HolE score through the convolution theorem: c = IDFT(conj(DFT(r)) * DFT(o)), score = <s, c>.
inline double hole_frequency_domain(const std::vector<double>& s, const std::vector<double>& r,
                                    const std::vector<double>& o)
{
    const std::size_t k = s.size();
    using cd = std::complex<double>;
    auto dft = [k](const std::vector<double>& x) {
        std::vector<cd> out(k);
        for (std::size_t f = 0; f < k; ++f) {
            cd acc = 0.0;
            for (std::size_t n = 0; n < k; ++n) {
                acc += x[n] * std::polar(1.0, -2.0 * std::numbers::pi * double(f * n) / double(k));
            }
            out[f] = acc;
        }
        return out;
    };
    const auto R = dft(r);
    const auto O = dft(o);
    double score = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        cd c = 0.0;
        for (std::size_t f = 0; f < k; ++f) {
            c += std::conj(R[f]) * O[f] * std::polar(1.0, 2.0 * std::numbers::pi * double(f * i) / double(k));
        }
        score += s[i] * c.real() / double(k);
    }
    return score;
}

// Weighted least-squares monotone fit restricted to values on a grid of step 1/steps,
// by dynamic programming over (distinct score, grid value). Ties share one value.
inline std::vector<double> isotonic_grid(const std::vector<double>& scores, const std::vector<bool>& labels,
                                         const std::vector<double>& weights, int steps = 1000)
{
    std::map<double, std::pair<double, double>> groups; // score -> (sum w, sum w*y)
    for (std::size_t i = 0; i < scores.size(); ++i) {
        auto& g = groups[scores[i]];
        g.first += weights[i];
        g.second += weights[i] * (labels[i] ? 1.0 : 0.0);
    }
    const std::size_t m = groups.size();
    const std::size_t G = static_cast<std::size_t>(steps) + 1;
    std::vector<std::vector<double>> cost(m, std::vector<double>(G));
    std::vector<std::vector<std::size_t>> arg(m, std::vector<std::size_t>(G));
    std::size_t j = 0;
    std::vector<double> keys;
    for (const auto& [score, g] : groups) {
        keys.push_back(score);
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_u = 0;
        for (std::size_t v = 0; v < G; ++v) {
            const double val = double(v) / steps;
            // sum w (val - y)^2 = W val^2 - 2 val S + S (y in {0,1}).
            const double here = g.first * val * val - 2.0 * val * g.second + g.second;
            if (j > 0 && cost[j - 1][v] < best) {
                best = cost[j - 1][v];
                best_u = v;
            }
            cost[j][v] = here + (j > 0 ? best : 0.0);
            arg[j][v] = best_u;
        }
        ++j;
    }
    std::vector<std::size_t> choice(m);
    choice[m - 1] = static_cast<std::size_t>(std::min_element(cost[m - 1].begin(), cost[m - 1].end()) -
                                             cost[m - 1].begin());
    for (std::size_t t = m - 1; t > 0; --t) {
        choice[t - 1] = arg[t][choice[t]];
    }
    std::map<double, double> value_of;
    for (std::size_t t = 0; t < m; ++t) {
        value_of[keys[t]] = double(choice[t]) / steps;
    }
    std::vector<double> out;
    for (double s : scores) {
        out.push_back(value_of[s]);
    }
    return out;
}

// Platt objective with Bayes-smoothed targets, summed (not normalized).
struct PlattProblem {
    std::vector<double> scores;
    std::vector<bool> labels;
    std::vector<double> weights;

    double objective(double a, double b) const
    {
        double wp = 0.0, wn = 0.0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            (labels[i] ? wp : wn) += weights[i];
        }
        const double tp = (wp + 1.0) / (wp + 2.0);
        const double tn = 1.0 / (wn + 2.0);
        double acc = 0.0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            const double t = labels[i] ? tp : tn;
            const double q = 1.0 / (1.0 + std::exp(-(a * scores[i] + b)));
            acc -= weights[i] * (t * std::log(q) + (1.0 - t) * std::log(1.0 - q));
        }
        return acc;
    }
};

// Grid search followed by damped Newton with finite-difference derivatives.
inline std::pair<double, double> platt_grid_newton(const PlattProblem& p)
{
    double best_a = 0.0, best_b = 0.0, best = std::numeric_limits<double>::infinity();
    for (double a = -10.0; a <= 10.0; a += 0.25) {
        for (double b = -10.0; b <= 10.0; b += 0.25) {
            const double v = p.objective(a, b);
            if (v < best) {
                best = v;
                best_a = a;
                best_b = b;
            }
        }
    }
    double a = best_a, b = best_b;
    const double h = 1e-4;
    for (int it = 0; it < 200; ++it) {
        auto f = [&](double x, double y) { return p.objective(x, y); };
        const double f0 = f(a, b);
        const double ga = (f(a + h, b) - f(a - h, b)) / (2 * h);
        const double gb = (f(a, b + h) - f(a, b - h)) / (2 * h);
        const double haa = (f(a + h, b) - 2 * f0 + f(a - h, b)) / (h * h);
        const double hbb = (f(a, b + h) - 2 * f0 + f(a, b - h)) / (h * h);
        const double hab = (f(a + h, b + h) - f(a + h, b - h) - f(a - h, b + h) + f(a - h, b - h)) / (4 * h * h);
        const double det = haa * hbb - hab * hab;
        double da = -(hbb * ga - hab * gb) / det;
        double db = -(-hab * ga + haa * gb) / det;
        if (!(det > 0.0)) {
            da = -ga;
            db = -gb;
        }
        double step = 1.0;
        while (step > 1e-12 && f(a + step * da, b + step * db) > f0) {
            step /= 2.0;
        }
        a += step * da;
        b += step * db;
        if (std::hypot(step * da, step * db) < 1e-10) {
            break;
        }
    }
    return {a, b};
}

// Self-adversarial loss with the negative weights frozen at `frozen_neg`, so that its
// finite-difference gradient is comparable to the stop-gradient analytic one.
inline double self_adversarial_frozen(const std::vector<double>& pos, const std::vector<double>& neg,
                               const std::vector<double>& frozen_neg, double gamma, double temperature)
{
    const std::size_t eta = neg.size() / pos.size();
    auto log_sigmoid = [](double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); };
    double total = 0.0;
    for (std::size_t i = 0; i < pos.size(); ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < eta; ++j) mx = std::max(mx, temperature * frozen_neg[i * eta + j]);
        double z = 0.0;
        for (std::size_t j = 0; j < eta; ++j) z += std::exp(temperature * frozen_neg[i * eta + j] - mx);
        total -= log_sigmoid(gamma + pos[i]);
        for (std::size_t j = 0; j < eta; ++j) {
            const double p = std::exp(temperature * frozen_neg[i * eta + j] - mx) / z;
            total -= p * log_sigmoid(-neg[i * eta + j] - gamma);
        }
    }
    return total;
}

struct RankSummary {
    double mr = 0.0;
    double mrr = 0.0;
    std::map<std::size_t, double> hits;
};

// Materializes every corruption, filters by linear scan over `known`, sorts scores.
// Ranks in query order: subject side then object side for each positive.
inline std::vector<std::size_t> brute_force_rank_list(const kgcal::EmbeddingModel& model,
                                                      const std::vector<kgcal::Triple>& positives,
                                                      const std::vector<kgcal::Triple>* known, bool pessimistic = true)
{
    std::vector<std::size_t> ranks;
    for (const auto& t : positives) {
        for (int side = 0; side < 2; ++side) {
            std::vector<double> competitors;
            for (kgcal::EntityId e = 0; e < model.num_entities(); ++e) {
                kgcal::Triple c = t;
                (side == 0 ? c.subject : c.object) = e;
                if (c == t) {
                    continue;
                }
                if (known != nullptr && std::find(known->begin(), known->end(), c) != known->end()) {
                    continue;
                }
                competitors.push_back(kgcal::score(model, c));
            }
            const double truth = kgcal::score(model, t);
            std::sort(competitors.begin(), competitors.end(), std::greater<>());
            std::size_t rank = 1;
            for (double c : competitors) {
                if (c > truth || (pessimistic && c == truth)) {
                    ++rank;
                }
            }
            ranks.push_back(rank);
        }
    }
    return ranks;
}

inline RankSummary brute_force_ranks(const kgcal::EmbeddingModel& model, const std::vector<kgcal::Triple>& positives,
                                     const std::vector<kgcal::Triple>* known, const std::vector<std::size_t>& hits_at,
                                     bool pessimistic = true)
{
    const auto ranks = brute_force_rank_list(model, positives, known, pessimistic);
    RankSummary out;
    for (std::size_t n : hits_at) {
        out.hits[n] = 0.0;
    }
    for (auto r : ranks) {
        out.mr += double(r);
        out.mrr += 1.0 / double(r);
        for (auto& [n, h] : out.hits) {
            h += r <= n ? 1.0 : 0.0;
        }
    }
    const double q = double(ranks.size());
    out.mr /= q;
    out.mrr /= q;
    for (auto& [n, h] : out.hits) {
        h /= q;
    }
    return out;
}

// Best accuracy of `score >= tau` over tau in {sample scores} U {+inf}.
inline double brute_force_threshold_accuracy(const std::vector<double>& scores, const std::vector<bool>& labels)
{
    std::vector<double> cands = scores;
    cands.push_back(std::numeric_limits<double>::infinity());
    double best = 0.0;
    for (double tau : cands) {
        std::size_t correct = 0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            correct += (scores[i] >= tau) == labels[i] ? 1 : 0;
        }
        best = std::max(best, double(correct) / double(scores.size()));
    }
    return best;
}

// A model with entries drawn uniformly from [-1, 1].
inline kgcal::EmbeddingModel random_model(kgcal::ModelKind kind, std::size_t k, std::size_t ne, std::size_t nr,
                                          std::uint64_t seed)
{
    kgcal::EmbeddingModel m(kind, k, ne, nr, seed);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (double& v : m.entity_data()) v = u(rng);
    for (double& v : m.relation_data()) v = u(rng);
    return m;
}

} // namespace oracle

#include "dub3d/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <unordered_map>

#include "dub3d/error.hpp"
#include "dub3d/tensor.hpp"

namespace dub3d {

using nlohmann::json;
using i64 = std::int64_t;

namespace {

struct Split {
    std::vector<const Prediction*> pos;  // generated
    std::vector<const Prediction*> neg;  // real
};

Split split_by_truth(const PredictionSet& preds) {
    Split s;
    for (const auto& p : preds) (p.truth == 1 ? s.pos : s.neg).push_back(&p);
    if (s.pos.empty() || s.neg.empty()) {
        throw DataError(std::string("balanced metrics: no ") + (s.pos.empty() ? "generated" : "real") +
                        " predictions to balance against");
    }
    return s;
}

void tally(Counts& c, const Prediction& p) {
    if (p.truth == 1) {
        (p.pred == 1 ? c.tp : c.fn)++;
    } else {
        (p.pred == 1 ? c.fp : c.tn)++;
    }
}

EvalReport summarize(const std::vector<double>& acc, const std::vector<double>& f1, i64 per_class) {
    auto mean_std = [](const std::vector<double>& v) {
        // Identical draws report exactly zero spread instead of rounding noise.
        if (std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); })) return std::pair{v.front(), 0.0};
        const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        double ss = 0.0;
        for (double x : v) ss += (x - m) * (x - m);
        return std::pair{m, std::sqrt(ss / static_cast<double>(v.size()))};
    };
    EvalReport r;
    std::tie(r.accuracy_mean, r.accuracy_std) = mean_std(acc);
    std::tie(r.f1_mean, r.f1_std) = mean_std(f1);
    r.repeats = static_cast<i64>(acc.size());
    r.per_class = per_class;
    return r;
}

}  // namespace

double accuracy(const Counts& c) {
    const i64 n = c.tp + c.tn + c.fp + c.fn;
    return n ? static_cast<double>(c.tp + c.tn) / static_cast<double>(n) : 0.0;
}

double f1_score(const Counts& c) {
    const double p = c.tp + c.fp ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
    const double r = c.tp + c.fn ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
    return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

EvalReport balanced_metrics(const PredictionSet& preds, std::int64_t repeats, std::uint64_t seed) {
    if (repeats < 1) throw std::invalid_argument("balanced metrics: repeats must be positive");
    const Split s = split_by_truth(preds);
    const auto& minority = s.pos.size() <= s.neg.size() ? s.pos : s.neg;
    const auto& majority = s.pos.size() <= s.neg.size() ? s.neg : s.pos;
    const std::size_t m = minority.size();
    Counts base;
    for (const auto* p : minority) tally(base, *p);
    std::vector<double> acc, f1;
    std::vector<std::size_t> order(majority.size());
    for (i64 r = 0; r < repeats; ++r) {
        Rng rng(seed + static_cast<std::uint64_t>(r));
        std::iota(order.begin(), order.end(), std::size_t{0});
        // Partial Fisher-Yates: the first m slots are a uniform draw without replacement.
        for (std::size_t i = 0; i < m && i + 1 < order.size(); ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
            std::swap(order[i], order[pick(rng)]);
        }
        Counts c = base;
        for (std::size_t i = 0; i < m; ++i) tally(c, *majority[order[i]]);
        acc.push_back(accuracy(c));
        f1.push_back(f1_score(c));
    }
    return summarize(acc, f1, static_cast<i64>(m));
}

EvalReport balanced_metrics_exhaustive(const PredictionSet& preds) {
    const Split s = split_by_truth(preds);
    const auto& minority = s.pos.size() <= s.neg.size() ? s.pos : s.neg;
    const auto& majority = s.pos.size() <= s.neg.size() ? s.neg : s.pos;
    const std::size_t m = minority.size(), n = majority.size();
    Counts base;
    for (const auto* p : minority) tally(base, *p);
    std::vector<double> acc, f1;
    // Lexicographic walk over m-subsets of n.
    std::vector<std::size_t> pick(m);
    std::iota(pick.begin(), pick.end(), std::size_t{0});
    while (true) {
        Counts c = base;
        for (std::size_t i : pick) tally(c, *majority[i]);
        acc.push_back(accuracy(c));
        f1.push_back(f1_score(c));
        std::size_t k = m;
        while (k > 0 && pick[k - 1] == n - m + (k - 1)) --k;
        if (k == 0) break;
        ++pick[k - 1];
        for (std::size_t j = k; j < m; ++j) pick[j] = pick[j - 1] + 1;
    }
    return summarize(acc, f1, static_cast<i64>(m));
}

std::vector<GeneratorRow> per_generator_breakdown(const PredictionSet& preds, const Manifest& manifest,
                                                  std::int64_t repeats, std::uint64_t seed) {
    std::unordered_map<std::string, const ManifestEntry*> by_id;
    for (const auto& e : manifest) by_id[e.id] = &e;
    PredictionSet reals;
    std::map<std::string, PredictionSet> fakes;
    for (const auto& p : preds) {
        auto it = by_id.find(p.id);
        if (it == by_id.end()) throw DataError("breakdown: prediction id '" + p.id + "' not in manifest");
        if (p.truth == 0) {
            reals.push_back(p);
        } else {
            fakes[it->second->model.value_or("unknown")].push_back(p);
        }
    }
    // Generators listed in the manifest for these splits but absent from the predictions.
    std::set<std::string> splits;
    for (const auto& p : preds) splits.insert(p.split);
    for (const auto& e : manifest) {
        if (e.label == Label::Generated && e.model && splits.contains(e.split)) fakes.try_emplace(*e.model);
    }
    std::vector<GeneratorRow> rows;
    for (auto& [model, set] : fakes) {
        GeneratorRow row;
        row.model = model;
        row.generated = static_cast<i64>(set.size());
        if (set.empty()) {
            row.warning = "no clips for generator '" + model + "'";
        } else if (reals.empty()) {
            row.warning = "no real clips to pair with generator '" + model + "'";
        } else {
            PredictionSet joined = reals;
            joined.insert(joined.end(), set.begin(), set.end());
            row.report = balanced_metrics(joined, repeats, seed);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

json report_to_json(const EvalReport& r) {
    return {{"accuracy_mean", r.accuracy_mean}, {"accuracy_std", r.accuracy_std}, {"f1_mean", r.f1_mean},
            {"f1_std", r.f1_std},               {"repeats", r.repeats},           {"per_class", r.per_class}};
}

void write_predictions(const PredictionSet& preds, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("predictions: cannot write " + path.string());
    for (const auto& p : preds) {
        json j = {{"id", p.id}, {"true", p.truth}, {"pred", p.pred}, {"score", p.score}, {"split", p.split}};
        out << j.dump() << '\n';
    }
    if (!out) throw DataError("predictions: write failed for " + path.string());
}

PredictionSet read_predictions(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("predictions: cannot open " + path.string());
    PredictionSet out;
    std::string line;
    i64 lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
        try {
            const json j = json::parse(line);
            Prediction p;
            p.id = j.at("id").get<std::string>();
            p.truth = j.at("true").get<int>();
            p.pred = j.at("pred").get<int>();
            p.score = j.at("score").get<double>();
            p.split = j.value("split", std::string());
            if ((p.truth != 0 && p.truth != 1) || (p.pred != 0 && p.pred != 1)) throw DataError("labels must be 0 or 1");
            if (!(p.score >= 0.0 && p.score <= 1.0)) throw DataError("score outside [0, 1]");
            out.push_back(std::move(p));
        } catch (const json::exception& err) {
            throw DataError(where + err.what());
        } catch (const DataError& err) {
            throw DataError(where + err.what());
        }
    }
    return out;
}

Manifest subsample_train(const Manifest& manifest, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("train_fraction", "must be in (0, 1]");
    if (fraction == 1.0) return manifest;
    Rng rng(seed);
    std::vector<bool> keep(manifest.size(), false);
    for (Label label : {Label::Real, Label::Generated}) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < manifest.size(); ++i) {
            if (manifest[i].label == label) idx.push_back(i);
        }
        if (idx.empty()) continue;
        const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size())));
        if (k == 0) {
            throw ConfigError("train_fraction", "fraction " + std::to_string(fraction) + " leaves no " +
                                                    std::string(label_name(label)) + " clips");
        }
        for (std::size_t i = 0; i < k; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
            std::swap(idx[i], idx[pick(rng)]);
            keep[idx[i]] = true;
        }
    }
    Manifest out;
    for (std::size_t i = 0; i < manifest.size(); ++i) {
        if (keep[i]) out.push_back(manifest[i]);
    }
    return out;
}

}  // namespace dub3d

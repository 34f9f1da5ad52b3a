#pragma once

// Whole-word left-to-right HMMs with diagonal Gaussian (mixture) emissions,
// Viterbi (segmental k-means) training, grammar-constrained decoding over the
// 5-slot matrix lattice, recognition result maps and SRT extraction.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "srmap/common.hpp"
#include "srmap/corpus.hpp"
#include "srmap/listener.hpp"

namespace srmap::recognizer {

using corpus::Sentence;
using listener::FeatureSequence;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct Gaussian {
  double weight = 1.0;
  std::vector<double> mean;
  std::vector<double> var;
  std::vector<double> inv_var;
  double log_norm = 0.0;  // -0.5 * sum(log(2 pi var)) + log(weight)

  void finalize() {
    double s = 0.0;
    inv_var.resize(var.size());
    for (std::size_t d = 0; d < var.size(); ++d) {
      s += std::log(2.0 * kPi * var[d]);
      inv_var[d] = 1.0 / var[d];
    }
    log_norm = -0.5 * s + std::log(weight);
  }

  double log_likelihood(std::span<const double> x) const {
    double q = 0.0;
    const std::size_t n = mean.size();
    const double* m = mean.data();
    const double* iv = inv_var.data();
    for (std::size_t d = 0; d < n; ++d) {
      const double e = x[d] - m[d];
      q += e * e * iv[d];
    }
    return log_norm - 0.5 * q;
  }
};

struct HmmState {
  std::vector<Gaussian> components;
  double log_self = std::log(0.5);
  double log_next = std::log(0.5);

  double log_likelihood(std::span<const double> x) const {
    if (components.size() == 1) return components[0].log_likelihood(x);
    double best = kNegInf;
    std::vector<double> ll(components.size());
    for (std::size_t m = 0; m < components.size(); ++m) best = std::max(best, ll[m] = components[m].log_likelihood(x));
    double s = 0.0;
    for (double v : ll) s += std::exp(v - best);
    return best + std::log(s);
  }
};

struct WordModel {
  int word_id = 0;
  std::vector<HmmState> states;
};

struct TrainOptions {
  int states = 6;
  int mixtures = 1;
  int max_iterations = 10;
  double variance_floor = 1e-3;
};

struct LabeledItem {
  Sentence sentence;
  FeatureSequence features;
};

/// Single-Gaussian emissions of every state in quadratic form:
/// log N(x) = c + sum_d x_d * w1_d + x_d^2 * w2_d. Rows are ordered by
/// (word, state); the weights are stored dimension-major so that one frame
/// is a sequence of axpy updates over all states.
struct EmissionTable {
  std::size_t states = 0;
  std::size_t dims = 0;
  std::vector<double> c;
  std::vector<double> w1;  // dims x states
  std::vector<double> w2;  // dims x states

  void evaluate(std::span<const double> x, double* out) const {
    std::copy(c.begin(), c.end(), out);
    for (std::size_t d = 0; d < dims; ++d) {
      const double a = x[d], b = x[d] * x[d];
      const double* p = w1.data() + d * states;
      const double* q = w2.data() + d * states;
      for (std::size_t s = 0; s < states; ++s) out[s] += a * p[s] + b * q[s];
    }
  }
};

struct ModelSet {
  std::vector<WordModel> words;  // indexed by word id
  TrainOptions options;
  int iterations_run = 0;
  std::optional<EmissionTable> table;  // present when every state has one component

  void prepare() {
    table.reset();
    for (const auto& w : words)
      for (const auto& st : w.states)
        if (st.components.size() != 1) return;
    EmissionTable t;
    t.states = words.size() * static_cast<std::size_t>(options.states);
    t.dims = words.empty() ? 0 : words[0].states[0].components[0].mean.size();
    t.c.resize(t.states);
    t.w1.assign(t.dims * t.states, 0.0);
    t.w2.assign(t.dims * t.states, 0.0);
    std::size_t row = 0;
    for (const auto& w : words)
      for (const auto& st : w.states) {
        const auto& g = st.components[0];
        double c = g.log_norm;
        for (std::size_t d = 0; d < t.dims; ++d) {
          c -= 0.5 * g.mean[d] * g.mean[d] * g.inv_var[d];
          t.w1[d * t.states + row] = g.mean[d] * g.inv_var[d];
          t.w2[d * t.states + row] = -0.5 * g.inv_var[d];
        }
        t.c[row] = c;
        ++row;
      }
    table = std::move(t);
  }
};

namespace detail {

// Frame-to-state labels for one sentence: value = slot * states + state.
using Alignment = std::vector<int>;

inline Alignment uniform_alignment(std::size_t frames, int states) {
  const int total = corpus::kSlots * states;
  Alignment a(frames);
  for (std::size_t t = 0; t < frames; ++t)
    a[t] = std::min(total - 1, static_cast<int>(static_cast<double>(t) * total / static_cast<double>(frames)));
  return a;
}

// Forced alignment of the sentence's concatenated word chain.
inline Alignment force_align(const LabeledItem& item, const ModelSet& models) {
  const int S = models.options.states;
  const int total = corpus::kSlots * S;
  const std::size_t T = item.features.frames;
  std::vector<const HmmState*> chain(static_cast<std::size_t>(total));
  for (int slot = 0; slot < corpus::kSlots; ++slot)
    for (int s = 0; s < S; ++s)
      chain[static_cast<std::size_t>(slot * S + s)] =
          &models.words[static_cast<std::size_t>(item.sentence.word_id(slot))].states[static_cast<std::size_t>(s)];
  std::vector<double> score(static_cast<std::size_t>(total), kNegInf), next(score.size());
  std::vector<int> back(T * static_cast<std::size_t>(total), -1);
  score[0] = chain[0]->log_likelihood(item.features.row(0));
  for (std::size_t t = 1; t < T; ++t) {
    const auto x = item.features.row(t);
    for (int j = 0; j < total; ++j) {
      double stay = score[static_cast<std::size_t>(j)] + chain[static_cast<std::size_t>(j)]->log_self;
      double enter = j > 0 ? score[static_cast<std::size_t>(j - 1)] + chain[static_cast<std::size_t>(j - 1)]->log_next : kNegInf;
      int from = j;
      double best = stay;
      if (enter > stay) {
        best = enter;
        from = j - 1;
      }
      if (best == kNegInf) {
        next[static_cast<std::size_t>(j)] = kNegInf;
        continue;
      }
      next[static_cast<std::size_t>(j)] = best + chain[static_cast<std::size_t>(j)]->log_likelihood(x);
      back[t * static_cast<std::size_t>(total) + static_cast<std::size_t>(j)] = from;
    }
    score.swap(next);
  }
  Alignment a(T);
  int j = total - 1;
  if (score[static_cast<std::size_t>(j)] == kNegInf) return uniform_alignment(T, S);
  for (std::size_t t = T; t-- > 0;) {
    a[t] = j;
    if (t > 0) j = back[t * static_cast<std::size_t>(total) + static_cast<std::size_t>(j)];
  }
  return a;
}

inline Gaussian fit_gaussian(const std::vector<std::span<const double>>& xs, std::size_t dims, double floor,
                             double weight) {
  Gaussian g;
  g.weight = weight;
  g.mean.assign(dims, 0.0);
  g.var.assign(dims, 0.0);
  for (const auto& x : xs)
    for (std::size_t d = 0; d < dims; ++d) g.mean[d] += x[d];
  for (double& m : g.mean) m /= static_cast<double>(xs.size());
  for (const auto& x : xs)
    for (std::size_t d = 0; d < dims; ++d) {
      const double e = x[d] - g.mean[d];
      g.var[d] += e * e;
    }
  for (double& v : g.var) v = std::max(v / static_cast<double>(xs.size()), floor);
  g.finalize();
  return g;
}

// Mixture by binary splitting plus a few k-means passes (deterministic).
inline std::vector<Gaussian> fit_mixture(const std::vector<std::span<const double>>& xs, std::size_t dims,
                                         int mixtures, double floor) {
  auto whole = fit_gaussian(xs, dims, floor, 1.0);
  if (mixtures <= 1 || xs.size() < 2 * static_cast<std::size_t>(mixtures)) return {whole};
  std::vector<std::vector<double>> centers{whole.mean};
  while (static_cast<int>(centers.size()) < mixtures) {
    std::vector<std::vector<double>> split;
    for (const auto& c : centers) {
      auto a = c, b = c;
      for (std::size_t d = 0; d < dims; ++d) {
        const double s = 0.2 * std::sqrt(whole.var[d]);
        a[d] += s;
        b[d] -= s;
      }
      split.push_back(std::move(a));
      if (static_cast<int>(split.size()) < mixtures) split.push_back(std::move(b));
    }
    centers = std::move(split);
    std::vector<int> label(xs.size(), 0);
    for (int pass = 0; pass < 5; ++pass) {
      for (std::size_t i = 0; i < xs.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < centers.size(); ++k) {
          double q = 0.0;
          for (std::size_t d = 0; d < dims; ++d) {
            const double e = xs[i][d] - centers[k][d];
            q += e * e / whole.var[d];
          }
          if (q < best) {
            best = q;
            label[i] = static_cast<int>(k);
          }
        }
      }
      for (std::size_t k = 0; k < centers.size(); ++k) {
        std::vector<double> m(dims, 0.0);
        std::size_t n = 0;
        for (std::size_t i = 0; i < xs.size(); ++i)
          if (label[i] == static_cast<int>(k)) {
            ++n;
            for (std::size_t d = 0; d < dims; ++d) m[d] += xs[i][d];
          }
        if (n == 0) continue;
        for (double& v : m) v /= static_cast<double>(n);
        centers[k] = std::move(m);
      }
    }
    if (static_cast<int>(centers.size()) == mixtures) {
      std::vector<Gaussian> out;
      for (std::size_t k = 0; k < centers.size(); ++k) {
        std::vector<std::span<const double>> part;
        for (std::size_t i = 0; i < xs.size(); ++i)
          if (label[i] == static_cast<int>(k)) part.push_back(xs[i]);
        if (part.empty()) continue;
        out.push_back(fit_gaussian(part, dims, floor, static_cast<double>(part.size()) / static_cast<double>(xs.size())));
      }
      return out;
    }
  }
  return {whole};
}

}  // namespace detail

/// Segmental k-means: uniform initial split, then {align, re-estimate} until
/// the alignment is stable or `max_iterations` passes have run.
inline ModelSet train_models(std::span<const LabeledItem> items, const TrainOptions& opt = {}) {
  if (opt.states < 2) throw ValidationError("train_models: at least 2 states per word are required");
  if (opt.mixtures < 1) throw ValidationError("train_models: mixture count must be >= 1");
  if (!(opt.variance_floor > 0.0)) throw ValidationError("train_models: variance floor must be > 0");
  if (items.empty()) throw ValidationError("train_models: no training items");
  const std::size_t dims = items[0].features.dims;
  for (const auto& it : items) {
    if (it.features.dims != dims) throw ValidationError("train_models: inconsistent feature dimensions");
    if (!it.sentence.valid()) throw ValidationError("train_models: invalid sentence label");
  }

  const int S = opt.states;
  ModelSet models;
  models.options = opt;
  models.words.resize(corpus::kVocabularySize);
  for (int w = 0; w < corpus::kVocabularySize; ++w) {
    models.words[static_cast<std::size_t>(w)].word_id = w;
    models.words[static_cast<std::size_t>(w)].states.resize(static_cast<std::size_t>(S));
  }

  std::vector<detail::Alignment> align(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) align[i] = detail::uniform_alignment(items[i].features.frames, S);

  auto reestimate = [&]() {
    // frames[w][s] -> feature rows
    std::vector<std::vector<std::vector<std::span<const double>>>> frames(
        corpus::kVocabularySize, std::vector<std::vector<std::span<const double>>>(static_cast<std::size_t>(S)));
    std::vector<std::vector<double>> stay(corpus::kVocabularySize, std::vector<double>(static_cast<std::size_t>(S), 0.0));
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& a = align[i];
      for (std::size_t t = 0; t < a.size(); ++t) {
        const int slot = a[t] / S, s = a[t] % S;
        const int w = items[i].sentence.word_id(slot);
        frames[static_cast<std::size_t>(w)][static_cast<std::size_t>(s)].push_back(items[i].features.row(t));
        if (t + 1 < a.size() && a[t + 1] == a[t]) stay[static_cast<std::size_t>(w)][static_cast<std::size_t>(s)] += 1.0;
      }
    }
    for (int w = 0; w < corpus::kVocabularySize; ++w) {
      const auto& fw = frames[static_cast<std::size_t>(w)];
      bool any = false;
      for (const auto& f : fw) any = any || !f.empty();
      if (!any)
        throw ValidationError("train_models: word '" + corpus::MatrixGrammar::standard().word(w).label + "' (id " +
                              std::to_string(w) + ") has no training frames");
      auto& model = models.words[static_cast<std::size_t>(w)];
      for (int s = 0; s < S; ++s) {
        auto xs = fw[static_cast<std::size_t>(s)];
        // an empty state borrows the frames of its nearest populated neighbour
        for (int off = 1; xs.empty() && off < S; ++off) {
          if (s - off >= 0 && !fw[static_cast<std::size_t>(s - off)].empty()) xs = fw[static_cast<std::size_t>(s - off)];
          else if (s + off < S && !fw[static_cast<std::size_t>(s + off)].empty()) xs = fw[static_cast<std::size_t>(s + off)];
        }
        auto& st = model.states[static_cast<std::size_t>(s)];
        st.components = detail::fit_mixture(xs, dims, opt.mixtures, opt.variance_floor);
        // transition probabilities from occupancy counts, add-one smoothed
        const double n = static_cast<double>(fw[static_cast<std::size_t>(s)].size());
        const double p_stay = (stay[static_cast<std::size_t>(w)][static_cast<std::size_t>(s)] + 1.0) / (n + 2.0);
        st.log_self = std::log(p_stay);
        st.log_next = std::log(1.0 - p_stay);
      }
    }
  };

  reestimate();
  models.iterations_run = 1;
  for (int it = 1; it < opt.max_iterations; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < items.size(); ++i) {
      auto a = detail::force_align(items[i], models);
      if (a != align[i]) {
        changed = true;
        align[i] = std::move(a);
      }
    }
    if (!changed) break;
    reestimate();
    models.iterations_run = it + 1;
  }
  models.prepare();
  return models;
}

struct DecodeOptions {
  double score_scale = 1.0;  // global weight on all model scores
};

/// Best word sequence through the slot lattice: slot s may only hold its own
/// 10 words, and a sentence is exactly one word per slot.
inline Sentence decode(const FeatureSequence& f, const ModelSet& models, const DecodeOptions& opt = {}) {
  const int S = models.options.states;
  const int W = corpus::kWordsPerSlot;
  const std::size_t T = f.frames;
  if (models.words.size() != static_cast<std::size_t>(corpus::kVocabularySize))
    throw ValidationError("decode: models must cover all 50 words");
  if (T == 0) return Sentence{};
  const double k = opt.score_scale;

  // emission cache [t][word][state]
  const std::size_t per_t = static_cast<std::size_t>(corpus::kVocabularySize * S);
  std::vector<double> emit(T * per_t);
  const bool tabled = models.table && models.table->states == per_t && models.table->dims == f.dims;
  for (std::size_t t = 0; t < T; ++t) {
    const auto x = f.row(t);
    double* e = emit.data() + t * per_t;
    if (tabled) {
      models.table->evaluate(x, e);
      for (std::size_t i = 0; i < per_t; ++i) e[i] *= k;
      continue;
    }
    for (int w = 0; w < corpus::kVocabularySize; ++w)
      for (int s = 0; s < S; ++s)
        e[w * S + s] = k * models.words[static_cast<std::size_t>(w)].states[static_cast<std::size_t>(s)].log_likelihood(x);
  }

  // lattice node = (slot, word-in-slot, state); back pointer stores the
  // previous node index
  const int nodes = corpus::kSlots * W * S;
  auto node = [&](int slot, int wi, int s) { return (slot * W + wi) * S + s; };
  std::vector<double> score(static_cast<std::size_t>(nodes), kNegInf), next(score.size());
  std::vector<int> back(T * static_cast<std::size_t>(nodes), -1);
  for (int wi = 0; wi < W; ++wi) score[static_cast<std::size_t>(node(0, wi, 0))] = emit[static_cast<std::size_t>(wi * S)];

  for (std::size_t t = 1; t < T; ++t) {
    // best word exit per slot at t-1
    std::array<double, corpus::kSlots> exit_score;
    std::array<int, corpus::kSlots> exit_node;
    for (int slot = 0; slot < corpus::kSlots; ++slot) {
      exit_score[static_cast<std::size_t>(slot)] = kNegInf;
      exit_node[static_cast<std::size_t>(slot)] = -1;
      for (int wi = 0; wi < W; ++wi) {
        const int n = node(slot, wi, S - 1);
        const auto& st = models.words[static_cast<std::size_t>(slot * W + wi)].states[static_cast<std::size_t>(S - 1)];
        const double v = score[static_cast<std::size_t>(n)] + k * st.log_next;
        if (v > exit_score[static_cast<std::size_t>(slot)]) {
          exit_score[static_cast<std::size_t>(slot)] = v;
          exit_node[static_cast<std::size_t>(slot)] = n;
        }
      }
    }
    for (int slot = 0; slot < corpus::kSlots; ++slot)
      for (int wi = 0; wi < W; ++wi) {
        const auto& model = models.words[static_cast<std::size_t>(slot * W + wi)];
        for (int s = 0; s < S; ++s) {
          const int n = node(slot, wi, s);
          double best = score[static_cast<std::size_t>(n)] + k * model.states[static_cast<std::size_t>(s)].log_self;
          int from = n;
          if (s > 0) {
            const double v = score[static_cast<std::size_t>(n - 1)] + k * model.states[static_cast<std::size_t>(s - 1)].log_next;
            if (v > best) {
              best = v;
              from = n - 1;
            }
          } else if (slot > 0 && exit_score[static_cast<std::size_t>(slot - 1)] > best) {
            best = exit_score[static_cast<std::size_t>(slot - 1)];
            from = exit_node[static_cast<std::size_t>(slot - 1)];
          }
          if (best == kNegInf) {
            next[static_cast<std::size_t>(n)] = kNegInf;
            continue;
          }
          next[static_cast<std::size_t>(n)] = best + emit[t * per_t + static_cast<std::size_t>((slot * W + wi) * S + s)];
          back[t * static_cast<std::size_t>(nodes) + static_cast<std::size_t>(n)] = from;
        }
      }
    score.swap(next);
  }

  // final node: last state of some word in the last slot; if the utterance is
  // too short to reach it, fall back to the best node overall
  int end = -1;
  double best = kNegInf;
  for (int wi = 0; wi < W; ++wi) {
    const int n = node(corpus::kSlots - 1, wi, S - 1);
    if (score[static_cast<std::size_t>(n)] > best) {
      best = score[static_cast<std::size_t>(n)];
      end = n;
    }
  }
  if (end < 0)
    for (int n = 0; n < nodes; ++n)
      if (score[static_cast<std::size_t>(n)] > best) {
        best = score[static_cast<std::size_t>(n)];
        end = n;
      }
  Sentence out;  // slots never visited keep word 0
  if (end < 0) return out;
  int n = end;
  for (std::size_t t = T; t-- > 0;) {
    const int slot = n / (W * S);
    out.words[static_cast<std::size_t>(slot)] = (n / S) % W;
    if (t > 0) n = back[t * static_cast<std::size_t>(nodes) + static_cast<std::size_t>(n)];
  }
  return out;
}

/// Percentage of position-wise matching words.
inline double score(std::span<const Sentence> hyp, std::span<const Sentence> ref) {
  if (hyp.size() != ref.size())
    throw ValidationError("score: " + std::to_string(hyp.size()) + " hypotheses for " + std::to_string(ref.size()) +
                          " references");
  if (ref.empty()) throw ValidationError("score: nothing to score");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ref.size(); ++i)
    for (int s = 0; s < corpus::kSlots; ++s)
      correct += hyp[i].words[static_cast<std::size_t>(s)] == ref[i].words[static_cast<std::size_t>(s)];
  return 100.0 * static_cast<double>(correct) / static_cast<double>(corpus::kSlots * ref.size());
}

// Result map ----------------------------------------------------------------------

struct RecognitionResultMap {
  std::vector<double> train_levels;
  std::vector<double> test_levels;
  std::vector<double> cells;  // train-major: cells[i * test_levels.size() + j]

  double& at(std::size_t i, std::size_t j) { return cells[i * test_levels.size() + j]; }
  double at(std::size_t i, std::size_t j) const { return cells[i * test_levels.size() + j]; }

  void validate() const {
    if (train_levels.empty() || test_levels.empty()) throw ValidationError("result map: empty level grid");
    if (cells.size() != train_levels.size() * test_levels.size())
      throw ValidationError("result map: cell count does not match the level grid");
    for (double c : cells)
      if (!(c >= 0.0 && c <= 100.0)) throw ValidationError("result map: cell outside [0, 100]");
  }

  friend bool operator==(const RecognitionResultMap&, const RecognitionResultMap&) = default;
};

inline std::vector<double> level_grid(double lo, int count, double step = 3.0) {
  if (count < 1) throw ValidationError("level_grid: need at least one level");
  std::vector<double> g(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) g[static_cast<std::size_t>(i)] = lo + step * i;
  return g;
}

inline void write_result_map(std::ostream& os, const RecognitionResultMap& m) {
  os << "train_level\ttest_level\tpct_correct\n";
  for (std::size_t i = 0; i < m.train_levels.size(); ++i)
    for (std::size_t j = 0; j < m.test_levels.size(); ++j)
      os << format_number(m.train_levels[i]) << '\t' << format_number(m.test_levels[j]) << '\t'
         << format_number(m.at(i, j)) << '\n';
}

struct Budget {
  int n_train = 120;
  int n_test = 40;
};

/// Supplies feature sequences for (sentences, level, role, seed). Role 0 is
/// training material, 1 is test material.
using ItemProvider =
    std::function<std::vector<FeatureSequence>(std::span<const Sentence>, double level_db_spl, int role, std::uint64_t seed)>;

/// Train one model set per training level, decode fresh test sentences at
/// every test level. Test material is drawn once per test level and shared
/// by all training rows.
inline RecognitionResultMap build_result_map(const ItemProvider& provide, const std::vector<double>& levels,
                                             const Budget& budget, std::uint64_t seed,
                                             const TrainOptions& topt = {}, const std::string& context = {}) {
  if (levels.empty()) throw ValidationError("build_result_map: empty level grid");
  for (std::size_t i = 1; i < levels.size(); ++i)
    if (std::abs(levels[i] - levels[i - 1] - 3.0) > 1e-9)
      throw ValidationError("build_result_map: levels must be evenly spaced in 3 dB steps");
  if (budget.n_train < 1 || budget.n_test < 1) throw ValidationError("build_result_map: budget must be positive");

  RecognitionResultMap map;
  map.train_levels = levels;
  map.test_levels = levels;
  map.cells.assign(levels.size() * levels.size(), 0.0);

  std::vector<std::vector<Sentence>> test_sent(levels.size());
  std::vector<std::vector<FeatureSequence>> test_feat(levels.size());
  for (std::size_t j = 0; j < levels.size(); ++j) {
    const auto s = mix_seed(seed, 0x7e57000 + j);
    test_sent[j] = corpus::enumerate_sentences(corpus::MatrixGrammar::standard(), budget.n_test, s);
    test_feat[j] = provide(test_sent[j], levels[j], 1, s);
  }
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const auto s = mix_seed(seed, 0x7a1e000 + i);
    const auto sentences = corpus::balanced_sentences(budget.n_train, s);
    auto feats = provide(sentences, levels[i], 0, s);
    std::vector<LabeledItem> items(sentences.size());
    for (std::size_t k = 0; k < sentences.size(); ++k) items[k] = {sentences[k], std::move(feats[k])};
    ModelSet models;
    try {
      models = train_models(items, topt);
    } catch (const Error& e) {
      throw Error((context.empty() ? std::string() : context + ": ") + "training at " + format_number(levels[i]) +
                  " dB SPL failed: " + e.what());
    }
    for (std::size_t j = 0; j < levels.size(); ++j) {
      std::vector<Sentence> hyp;
      hyp.reserve(test_feat[j].size());
      for (const auto& f : test_feat[j]) hyp.push_back(decode(f, models));
      map.at(i, j) = score(hyp, test_sent[j]);
    }
  }
  return map;
}

// SRT extraction ------------------------------------------------------------------

enum class SrtFlag { ok, unbounded_low, unbounded_high, error };

inline std::string to_string(SrtFlag f) {
  switch (f) {
    case SrtFlag::ok: return "ok";
    case SrtFlag::unbounded_low: return "unbounded_low";
    case SrtFlag::unbounded_high: return "unbounded_high";
    case SrtFlag::error: return "error";
  }
  return "error";
}

inline std::optional<SrtFlag> parse_flag(std::string_view s) {
  if (s == "ok") return SrtFlag::ok;
  if (s == "unbounded_low") return SrtFlag::unbounded_low;
  if (s == "unbounded_high") return SrtFlag::unbounded_high;
  if (s == "error") return SrtFlag::error;
  return std::nullopt;
}

struct SrtResult {
  std::string condition_id;
  double srt_db_spl = std::numeric_limits<double>::quiet_NaN();
  double target_rate = 50.0;
  SrtFlag flag = SrtFlag::error;
  double achieved_at_train_level = std::numeric_limits<double>::quiet_NaN();
  double map_min = 0.0;
  double map_max = 0.0;
};

/// First upward crossing of `target` in each training row, linearly
/// interpolated; the SRT is the lowest crossing over all rows. A row already
/// at or above target at the lowest test level crosses there (unbounded
/// below). No crossing anywhere: unbounded above, reported one step past the
/// highest test level.
inline SrtResult extract_srt(const RecognitionResultMap& map, double target = 50.0) {
  if (map.train_levels.empty() || map.test_levels.empty() || map.cells.empty())
    throw ValidationError("extract_srt: empty result map");
  map.validate();
  SrtResult r;
  r.target_rate = target;
  r.map_min = *std::min_element(map.cells.begin(), map.cells.end());
  r.map_max = *std::max_element(map.cells.begin(), map.cells.end());
  const auto& L = map.test_levels;
  double best = std::numeric_limits<double>::infinity();
  bool low = false;
  for (std::size_t i = 0; i < map.train_levels.size(); ++i) {
    double crossing = std::numeric_limits<double>::infinity();
    bool row_low = false;
    if (map.at(i, 0) >= target) {
      crossing = L[0];
      row_low = true;
    } else {
      for (std::size_t j = 1; j < L.size(); ++j) {
        const double a = map.at(i, j - 1), b = map.at(i, j);
        if (a < target && b >= target) {
          crossing = L[j - 1] + (target - a) / (b - a) * (L[j] - L[j - 1]);
          break;
        }
      }
    }
    if (crossing < best) {
      best = crossing;
      low = row_low;
      r.achieved_at_train_level = map.train_levels[i];
    }
  }
  if (std::isinf(best)) {
    const double step = L.size() > 1 ? L[1] - L[0] : 3.0;
    r.srt_db_spl = L.back() + step;
    r.flag = SrtFlag::unbounded_high;
  } else {
    r.srt_db_spl = best;
    r.flag = low ? SrtFlag::unbounded_low : SrtFlag::ok;
  }
  return r;
}

}  // namespace srmap::recognizer

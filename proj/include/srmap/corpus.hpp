#pragma once

// Matrix-sentence speech material: a 5-slot x 10-word closed grammar,
// deterministic synthetic pseudo-words, and assembly of noisy test items
// (dry sentence -> level -> talker IR -> plus masker fragment).

#include <algorithm>
#include <array>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "srmap/common.hpp"
#include "srmap/fft.hpp"
#include "srmap/signal.hpp"

namespace srmap::corpus {

inline constexpr int kSlots = 5;
inline constexpr int kWordsPerSlot = 10;
inline constexpr int kVocabularySize = kSlots * kWordsPerSlot;
inline constexpr int kSentenceSpace = 100000;  // 10^5
inline constexpr double kWordDurationS = 0.4;
inline constexpr double kWordRmsDbfs = -20.0;

struct Word {
  int id = 0;  // slot * 10 + index
  std::string label;
  std::uint64_t seed = 0;
};

struct Slot {
  std::string category;
  std::vector<Word> words;
};

struct MatrixGrammar {
  std::vector<Slot> slots;

  static MatrixGrammar standard() {
    static const std::array<std::pair<const char*, std::array<const char*, 10>>, kSlots> kTable = {{
        {"name", {"Peter", "Kerstin", "Tanja", "Ulrich", "Britta", "Wolfgang", "Stefan", "Thomas", "Doris", "Nina"}},
        {"verb", {"got", "sees", "buys", "gives", "wins", "sells", "takes", "paints", "wants", "has"}},
        {"numeral", {"two", "three", "four", "five", "six", "seven", "eight", "nine", "twelve", "eighteen"}},
        {"adjective", {"large", "small", "old", "nice", "heavy", "wet", "green", "cheap", "red", "white"}},
        {"object", {"rings", "tables", "cups", "chairs", "flowers", "knives", "shoes", "stones", "spoons", "bikes"}},
    }};
    MatrixGrammar g;
    for (int s = 0; s < kSlots; ++s) {
      Slot slot;
      slot.category = kTable[s].first;
      for (int w = 0; w < kWordsPerSlot; ++w) {
        const int id = s * kWordsPerSlot + w;
        slot.words.push_back({id, kTable[s].second[w], 0x5eed0000ULL + static_cast<std::uint64_t>(id)});
      }
      g.slots.push_back(std::move(slot));
    }
    return g;
  }

  std::size_t vocabulary_size() const {
    std::size_t n = 0;
    for (const auto& s : slots) n += s.words.size();
    return n;
  }
  const Word& word(int word_id) const {
    if (word_id < 0 || word_id >= kVocabularySize) throw ValidationError("grammar: unknown word id " + std::to_string(word_id));
    return slots[static_cast<std::size_t>(word_id / kWordsPerSlot)].words[static_cast<std::size_t>(word_id % kWordsPerSlot)];
  }
};

/// One matrix sentence: the chosen word index (0..9) in each slot.
struct Sentence {
  std::array<int, kSlots> words{};

  int word_id(int slot) const { return slot * kWordsPerSlot + words[static_cast<std::size_t>(slot)]; }
  int index() const {  // position in the 10^5 sentence space
    int v = 0;
    for (int w : words) v = v * kWordsPerSlot + w;
    return v;
  }
  static Sentence from_index(int idx) {
    Sentence s;
    for (int slot = kSlots - 1; slot >= 0; --slot) {
      s.words[static_cast<std::size_t>(slot)] = idx % kWordsPerSlot;
      idx /= kWordsPerSlot;
    }
    return s;
  }
  bool valid() const {
    return std::all_of(words.begin(), words.end(), [](int w) { return w >= 0 && w < kWordsPerSlot; });
  }
  friend bool operator==(const Sentence&, const Sentence&) = default;
  friend auto operator<=>(const Sentence&, const Sentence&) = default;
};

inline std::string to_text(const MatrixGrammar& g, const Sentence& s) {
  std::string out;
  for (int slot = 0; slot < kSlots; ++slot) {
    if (slot) out += ' ';
    out += g.word(s.word_id(slot)).label;
  }
  return out;
}

struct PresentationLevel {
  double level_db_spl = 65.0;  // RMS of the dry sentence before IR filtering
};

/// Uniform sampling without replacement from the 10^5 valid sentences.
inline std::vector<Sentence> enumerate_sentences(const MatrixGrammar&, int count, std::uint64_t seed) {
  if (count < 0 || count > kSentenceSpace)
    throw ValidationError("enumerate_sentences: count must lie in [0, 100000]");
  std::vector<int> pool(kSentenceSpace);
  std::iota(pool.begin(), pool.end(), 0);
  std::mt19937_64 rng(seed);
  std::vector<Sentence> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    std::uniform_int_distribution<int> pick(i, kSentenceSpace - 1);
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick(rng))]);
    out.push_back(Sentence::from_index(pool[static_cast<std::size_t>(i)]));
  }
  return out;
}

/// Sentences whose per-slot word sequences are concatenated random
/// permutations, so every word occurs floor(count/10) or ceil(count/10) times.
/// Used for training lists, where each word model needs data.
inline std::vector<Sentence> balanced_sentences(int count, std::uint64_t seed) {
  if (count < 0) throw ValidationError("balanced_sentences: negative count");
  std::mt19937_64 rng(seed);
  std::vector<Sentence> out(static_cast<std::size_t>(count));
  for (int slot = 0; slot < kSlots; ++slot) {
    std::array<int, kWordsPerSlot> perm{};
    for (int i = 0; i < count; ++i) {
      if (i % kWordsPerSlot == 0) {
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
      }
      out[static_cast<std::size_t>(i)].words[static_cast<std::size_t>(slot)] = perm[static_cast<std::size_t>(i % kWordsPerSlot)];
    }
  }
  return out;
}

// Synthetic pseudo-words ---------------------------------------------------------

namespace detail {

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// Candidate formant frequencies: centers of 20 mel-spaced bands over 64-8000 Hz.
inline const std::array<double, 20>& formant_grid() {
  static const std::array<double, 20> grid = [] {
    std::array<double, 20> g{};
    const double lo = hz_to_mel(64.0), hi = hz_to_mel(8000.0);
    const double step = (hi - lo) / 21.0;
    for (int b = 0; b < 20; ++b) g[static_cast<std::size_t>(b)] = mel_to_hz(lo + (b + 1) * step);
    return g;
  }();
  return grid;
}

}  // namespace detail

/// Formant frequencies (Hz) of one 133 ms segment of a word.
inline std::array<double, 3> segment_formants(int word_id, std::uint64_t seed, int segment) {
  const std::uint64_t h = mix_seed(seed, static_cast<std::uint64_t>(word_id) * 16 + static_cast<std::uint64_t>(segment));
  const auto& grid = detail::formant_grid();
  return {grid[1 + h % 6], grid[7 + (h >> 8) % 6], grid[13 + (h >> 16) % 6]};
}

/// 0.4 s pseudo-word: three segments, each a sum of three formant tones with
/// 10 ms raised-cosine edges, normalized to -20 dBFS RMS.
inline MonoSignal synthesize_word(int word_id, std::uint64_t seed, int sample_rate = kDefaultSampleRate) {
  if (word_id < 0 || word_id >= kVocabularySize)
    throw ValidationError("synthesize_word: unknown word id " + std::to_string(word_id));
  const auto n = static_cast<std::size_t>(std::llround(kWordDurationS * sample_rate));
  MonoSignal out;
  out.sample_rate = sample_rate;
  out.samples.assign(n, 0.0);
  const auto ramp = static_cast<std::size_t>(std::llround(0.010 * sample_rate));
  static constexpr std::array<double, 3> kAmplitude = {1.0, 0.5, 0.3};
  for (int seg = 0; seg < 3; ++seg) {
    const std::size_t begin = n * static_cast<std::size_t>(seg) / 3;
    const std::size_t end = n * static_cast<std::size_t>(seg + 1) / 3;
    const auto freqs = segment_formants(word_id, seed, seg);
    for (int k = 0; k < 3; ++k) {
      const double phase =
          2.0 * kPi * static_cast<double>(mix_seed(seed, 1000 + word_id * 8 + seg * 3 + k) % 10000) / 10000.0;
      for (std::size_t i = begin; i < end; ++i) {
        const double t = static_cast<double>(i - begin) / sample_rate;
        out.samples[i] += kAmplitude[static_cast<std::size_t>(k)] * std::sin(2.0 * kPi * freqs[static_cast<std::size_t>(k)] * t + phase);
      }
    }
    for (std::size_t i = 0; i < ramp && begin + i < end; ++i) {
      const double w = 0.5 * (1.0 - std::cos(kPi * static_cast<double>(i) / static_cast<double>(ramp)));
      out.samples[begin + i] *= w;
      out.samples[end - 1 - i] *= w;
    }
  }
  const double r = rms(out.samples);
  const double target = db_to_amplitude(kWordRmsDbfs);
  for (double& v : out.samples) v *= target / r;
  return out;
}

/// Thread-safe cache of the synthesized vocabulary.
class WordBank {
 public:
  explicit WordBank(MatrixGrammar grammar = MatrixGrammar::standard(), int sample_rate = kDefaultSampleRate)
      : grammar_(std::move(grammar)), sample_rate_(sample_rate) {}

  const MatrixGrammar& grammar() const { return grammar_; }
  int sample_rate() const { return sample_rate_; }

  const MonoSignal& word(int word_id) const {
    std::lock_guard lock(mutex_);
    auto it = cache_.find(word_id);
    if (it == cache_.end())
      it = cache_.emplace(word_id, synthesize_word(word_id, grammar_.word(word_id).seed, sample_rate_)).first;
    return it->second;
  }

  /// Concatenated dry sentence audio (no gaps between words).
  MonoSignal sentence(const Sentence& s) const {
    MonoSignal out;
    out.sample_rate = sample_rate_;
    for (int slot = 0; slot < kSlots; ++slot) {
      const auto& w = word(s.word_id(slot));
      out.samples.insert(out.samples.end(), w.samples.begin(), w.samples.end());
    }
    return out;
  }

 private:
  MatrixGrammar grammar_;
  int sample_rate_;
  mutable std::mutex mutex_;
  mutable std::map<int, MonoSignal> cache_;
};

// Noisy items --------------------------------------------------------------------

inline constexpr double kCrossfadeS = 0.010;

/// `n` samples of the masker starting at `offset`, tiled periodically when the
/// fragment runs past the end. Each wrap is an equal-power crossfade of
/// `crossfade` samples between the recording's end and its beginning.
inline BinauralSignal masker_fragment(const BinauralSignal& masker, std::size_t offset, std::size_t n,
                                      std::size_t crossfade) {
  masker.check();
  const std::size_t m = masker.size();
  if (m == 0) throw ValidationError("masker_fragment: empty masker");
  crossfade = std::min(crossfade, m / 2);
  const std::size_t period = m - crossfade;
  BinauralSignal out(n, masker.sample_rate, masker.calibration_db);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t p = offset + i;
    const std::size_t cycle = p / period;
    const std::size_t j = p % period;
    for (int c = 0; c < 2; ++c) {
      const auto& x = masker.channels[c];
      double v;
      if (cycle >= 1 && j < crossfade) {
        const double a = 0.5 * kPi * (static_cast<double>(j) + 0.5) / static_cast<double>(crossfade);
        v = x[j] * std::sin(a) + x[period + j] * std::cos(a);
      } else {
        v = x[j];
      }
      out.channels[c][i] = v;
    }
  }
  return out;
}

/// Talker signal at the ears, truncated to the dry sentence length.
inline BinauralSignal speech_at_ears(const MonoSignal& dry, const ImpulseResponsePair& ir) {
  auto wet = fast_convolve(dry, ir);
  for (auto& c : wet.channels) c.resize(dry.samples.size());
  return wet;
}

/// Talker responses per (word, IR realization). Convolution distributes over
/// the concatenated words, so a sentence at the ears is the sum of its
/// shifted word responses; this avoids one long convolution per item.
class SpeechAtEars {
 public:
  SpeechAtEars(const WordBank& bank, std::vector<ImpulseResponsePair> irs) : bank_(bank), irs_(std::move(irs)) {
    if (irs_.empty()) throw ValidationError("SpeechAtEars: empty IR list");
  }

  const WordBank& bank() const { return bank_; }
  std::size_t realizations() const { return irs_.size(); }
  const ImpulseResponsePair& ir(std::size_t r) const { return irs_.at(r); }

  /// Equals speech_at_ears(bank.sentence(s), ir(r)).
  BinauralSignal sentence(const Sentence& s, std::size_t r) const {
    const auto& first = bank_.word(s.word_id(0));
    const std::size_t word_len = first.samples.size();
    const std::size_t n = word_len * kSlots;
    BinauralSignal out(n, bank_.sample_rate());
    for (int slot = 0; slot < kSlots; ++slot) {
      const auto& w = word(s.word_id(slot), r);
      const std::size_t at = static_cast<std::size_t>(slot) * word_len;
      for (int c = 0; c < 2; ++c) {
        const auto& src = w.channels[c];
        auto& dst = out.channels[c];
        const std::size_t m = std::min(src.size(), n - at);
        for (std::size_t i = 0; i < m; ++i) dst[at + i] += src[i];
      }
    }
    return out;
  }

 private:
  const BinauralSignal& word(int word_id, std::size_t r) const {
    std::lock_guard lock(mutex_);
    auto key = std::make_pair(word_id, r);
    auto it = cache_.find(key);
    if (it == cache_.end()) it = cache_.emplace(key, fast_convolve(bank_.word(word_id), irs_.at(r))).first;
    return it->second;
  }

  const WordBank& bank_;
  std::vector<ImpulseResponsePair> irs_;
  mutable std::mutex mutex_;
  mutable std::map<std::pair<int, std::size_t>, BinauralSignal> cache_;
};

/// Linear gain that brings the dry sentence to the given presentation level.
inline double level_gain(const MonoSignal& dry, PresentationLevel level, double calibration_db = kDefaultCalibration) {
  const double current = level_db_spl(dry.samples, calibration_db);
  return db_to_amplitude(level.level_db_spl - current);
}

/// speech * gain + masker fragment at `offset`.
inline BinauralSignal mix(const BinauralSignal& speech, double gain, const BinauralSignal& masker,
                          std::size_t offset) {
  auto out = masker_fragment(masker, offset,
                             speech.size(),
                             static_cast<std::size_t>(std::llround(kCrossfadeS * masker.sample_rate)));
  for (int c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < speech.size(); ++i) out.channels[c][i] += gain * speech.channels[c][i];
  return out;
}

struct NoisyItem {
  BinauralSignal signal;
  int ir_realization = 0;
  std::size_t masker_offset = 0;
};

/// Dry sentence scaled to `level`, convolved with IR realization
/// `item_index % irs.size()`, plus a masker fragment at a random offset drawn
/// from `rng`. The masker level is never changed.
inline NoisyItem build_noisy_item(const MonoSignal& dry, PresentationLevel level,
                                  std::span<const ImpulseResponsePair> irs, const BinauralSignal& masker,
                                  std::mt19937_64& rng, std::size_t item_index = 0) {
  if (irs.empty()) throw ValidationError("build_noisy_item: empty IR list");
  if (masker.size() == 0) throw ValidationError("build_noisy_item: empty masker");
  NoisyItem item;
  item.ir_realization = static_cast<int>(item_index % irs.size());
  std::uniform_int_distribution<std::size_t> pick(0, masker.size() - 1);
  item.masker_offset = pick(rng);
  const auto speech = speech_at_ears(dry, irs[static_cast<std::size_t>(item.ir_realization)]);
  item.signal = mix(speech, level_gain(dry, level, masker.calibration_db), masker, item.masker_offset);
  return item;
}

inline NoisyItem build_noisy_item(const WordBank& bank, const Sentence& sentence, PresentationLevel level,
                                  std::span<const ImpulseResponsePair> irs, const BinauralSignal& masker,
                                  std::mt19937_64& rng, std::size_t item_index = 0) {
  return build_noisy_item(bank.sentence(sentence), level, irs, masker, rng, item_index);
}

inline NoisyItem build_noisy_item(const SpeechAtEars& talker, const Sentence& sentence, PresentationLevel level,
                                  const BinauralSignal& masker, std::mt19937_64& rng, std::size_t item_index = 0) {
  if (masker.size() == 0) throw ValidationError("build_noisy_item: empty masker");
  NoisyItem item;
  item.ir_realization = static_cast<int>(item_index % talker.realizations());
  std::uniform_int_distribution<std::size_t> pick(0, masker.size() - 1);
  item.masker_offset = pick(rng);
  const auto dry = talker.bank().sentence(sentence);
  const auto speech = talker.sentence(sentence, static_cast<std::size_t>(item.ir_realization));
  item.signal = mix(speech, level_gain(dry, level, masker.calibration_db), masker, item.masker_offset);
  return item;
}

/// Silent masker of the given length (quiet conditions).
inline BinauralSignal silence(std::size_t n, int sample_rate = kDefaultSampleRate) {
  return BinauralSignal(n, sample_rate);
}

// Manifest -----------------------------------------------------------------------

struct ManifestRow {
  std::string item_id;
  Sentence sentence;
  double level_db_spl = 0.0;
  int ir_realization = 0;
  std::size_t masker_offset = 0;
};

inline void write_manifest(std::ostream& os, const MatrixGrammar& g, std::span<const ManifestRow> rows) {
  os << "item_id\tsentence\tlevel_db_spl\tir_realization\tmasker_offset_samples\n";
  for (const auto& r : rows)
    os << r.item_id << '\t' << to_text(g, r.sentence) << '\t' << format_number(r.level_db_spl) << '\t'
       << r.ir_realization << '\t' << r.masker_offset << '\n';
}

}  // namespace srmap::corpus

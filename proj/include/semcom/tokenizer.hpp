// Subword vocabulary (byte-pair merges), text <-> token conversion, and the
// subword-to-phoneme lexicon for the reconstruction path.
#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "semcom/common.hpp"

namespace semcom::tok {

// Word-boundary marker prepended to word-initial symbols (U+2581).
inline const std::string kMarker = "\xe2\x96\x81";
inline const std::string kSpecialLiteral = "<s/>";

using TokenId = std::size_t;

struct Vocabulary {
  std::vector<std::string> entries;  // ids 0..entries.size()-1
  bool boundary_marker = true;

  TokenId special_id() const { return entries.size(); }
  std::size_t total_size() const { return entries.size() + 1; }

  const std::string& entry(TokenId id) const {
    if (id >= entries.size()) throw ContractError("vocab entry id out of range");
    return entries[id];
  }
};

// Next UTF-8 code point as a byte string (for error messages and alphabet
// construction). Falls back to single bytes on malformed input.
inline std::string next_utf8(const std::string& s, std::size_t pos) {
  unsigned char c = static_cast<unsigned char>(s[pos]);
  std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xe ? 3 : (c >> 3) == 0x1e ? 4 : 1;
  if (pos + len > s.size()) len = 1;
  return s.substr(pos, len);
}

inline std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r') {
      if (!cur.empty()) words.push_back(std::move(cur)), cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

// Core merge procedure: repeatedly merge the most frequent adjacent symbol
// pair (ties broken by lexicographically smallest pair) until `budget`
// distinct entries exist. Sequences carry occurrence counts.
inline std::vector<std::string> bpe_merge(std::vector<std::pair<std::vector<std::string>, std::size_t>> seqs,
                                          std::size_t budget) {
  std::set<std::string> alphabet;
  for (const auto& [seq, cnt] : seqs)
    for (const auto& s : seq) alphabet.insert(s);
  if (alphabet.size() > budget)
    throw ConfigError("vocabulary budget " + std::to_string(budget) + " smaller than alphabet (" +
                      std::to_string(alphabet.size()) + " symbols)");

  std::vector<std::string> entries(alphabet.begin(), alphabet.end());
  std::set<std::string> known(alphabet.begin(), alphabet.end());

  while (entries.size() < budget) {
    std::map<std::pair<std::string, std::string>, std::size_t> pair_counts;
    for (const auto& [seq, cnt] : seqs)
      for (std::size_t i = 0; i + 1 < seq.size(); ++i) pair_counts[{seq[i], seq[i + 1]}] += cnt;
    if (pair_counts.empty()) break;

    std::pair<std::string, std::string> best;
    std::size_t best_count = 0;
    for (const auto& [p, c] : pair_counts)
      if (c > best_count) best = p, best_count = c;  // map order = lexicographic, first max wins ties

    std::string merged = best.first + best.second;
    if (known.count(merged)) {
      // merged symbol already exists as an entry; applying the merge still
      // compacts sequences but adds nothing new -- drop the pair by applying
      // without registering, and continue
    } else {
      entries.push_back(merged);
      known.insert(merged);
    }
    for (auto& [seq, cnt] : seqs) {
      std::vector<std::string> out;
      out.reserve(seq.size());
      for (std::size_t i = 0; i < seq.size(); ++i) {
        if (i + 1 < seq.size() && seq[i] == best.first && seq[i + 1] == best.second) {
          out.push_back(merged);
          ++i;
        } else {
          out.push_back(seq[i]);
        }
      }
      seq = std::move(out);
    }
  }
  return entries;
}

// Deterministic vocabulary construction over whitespace-separated words with
// the word-boundary marker as its own starting symbol.
inline Vocabulary build_vocab(const std::vector<std::string>& corpus_texts, std::size_t budget) {
  if (corpus_texts.empty()) throw ConfigError("build_vocab: empty corpus");
  std::map<std::string, std::size_t> word_counts;
  for (const auto& text : corpus_texts)
    for (const auto& w : split_words(text)) ++word_counts[w];
  if (word_counts.empty()) throw ConfigError("build_vocab: corpus has no words");

  std::vector<std::pair<std::vector<std::string>, std::size_t>> seqs;
  seqs.reserve(word_counts.size());
  for (const auto& [word, count] : word_counts) {
    std::vector<std::string> symbols;
    symbols.push_back(kMarker);
    for (std::size_t i = 0; i < word.size();) {
      std::string cp = next_utf8(word, i);
      symbols.push_back(cp);
      i += cp.size();
    }
    seqs.emplace_back(std::move(symbols), count);
  }

  Vocabulary v;
  v.entries = bpe_merge(std::move(seqs), budget);
  v.boundary_marker = true;
  return v;
}

using TokenSequence = std::vector<TokenId>;

// Greedy longest-match segmentation, left to right over bytes.
inline TokenSequence encode(const std::string& text, const Vocabulary& vocab) {
  std::unordered_map<std::string, TokenId> lookup;
  std::size_t max_len = 0;
  for (TokenId i = 0; i < vocab.entries.size(); ++i) {
    lookup.emplace(vocab.entries[i], i);
    max_len = std::max(max_len, vocab.entries[i].size());
  }

  std::string stream;
  if (vocab.boundary_marker) {
    for (const auto& w : split_words(text)) stream += kMarker + w;
  } else {
    stream = text;
  }

  TokenSequence out;
  std::size_t pos = 0;
  while (pos < stream.size()) {
    std::size_t take = std::min(max_len, stream.size() - pos);
    bool found = false;
    for (std::size_t len = take; len >= 1; --len) {
      auto it = lookup.find(stream.substr(pos, len));
      if (it != lookup.end()) {
        out.push_back(it->second);
        pos += len;
        found = true;
        break;
      }
    }
    if (!found)
      throw TokenizeError("unencodable character '" + next_utf8(stream, pos) + "' at byte " +
                          std::to_string(pos));
  }
  return out;
}

inline std::string decode(const TokenSequence& tokens, const Vocabulary& vocab) {
  std::string joined;
  for (TokenId id : tokens) {
    if (id == vocab.special_id()) continue;  // specials are framing, not text
    joined += vocab.entry(id);
  }
  if (!vocab.boundary_marker) return joined;
  std::string out;
  std::size_t pos = 0;
  while (pos < joined.size()) {
    if (joined.compare(pos, kMarker.size(), kMarker) == 0) {
      if (!out.empty()) out += ' ';
      pos += kMarker.size();
    } else {
      out += joined[pos++];
    }
  }
  return out;
}

inline void save_vocab(const std::string& path, const Vocabulary& v) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write vocab: " + path);
  for (const auto& e : v.entries) os << e << "\n";
  os << kSpecialLiteral << "\n";
}

inline Vocabulary load_vocab(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open vocab: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) lines.push_back(line);
  if (lines.empty() || lines.back() != kSpecialLiteral)
    throw ConfigError("vocab file " + path + " must end with the reserved line " + kSpecialLiteral);
  lines.pop_back();
  Vocabulary v;
  v.entries = std::move(lines);
  v.boundary_marker = false;
  for (const auto& e : v.entries)
    if (e.compare(0, kMarker.size(), kMarker) == 0) v.boundary_marker = true;
  std::set<std::string> uniq(v.entries.begin(), v.entries.end());
  if (uniq.size() != v.entries.size()) throw ConfigError("vocab file has duplicate entries");
  for (const auto& e : v.entries)
    if (e.empty()) throw ConfigError("vocab file has an empty entry");
  return v;
}

// ---------------------------------------------------------------------------
// Lexicon: subword -> phoneme list, with letter-to-sound fallback.
// ---------------------------------------------------------------------------

struct Lexicon {
  std::map<std::string, std::vector<std::string>> entries;

  // Fallback spells the subword out letter by letter; the boundary marker
  // contributes no phoneme. Empty results become SIL.
  static std::vector<std::string> letter_to_sound(const std::string& subword) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < subword.size();) {
      std::string cp = next_utf8(subword, i);
      i += cp.size();
      if (cp == kMarker) continue;
      char c = cp[0];
      if (cp.size() == 1 && ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'))) {
        out.push_back(std::string(1, static_cast<char>(std::toupper(c))));
      } else if (cp.size() == 1 && c >= '0' && c <= '9') {
        out.push_back("D" + cp);
      } else if (cp == "'" || cp == "-") {
        continue;
      } else {
        throw LexiconError("no letter-to-sound rule for '" + cp + "' in subword '" + subword + "'");
      }
    }
    if (out.empty()) out.push_back("SIL");
    return out;
  }

  // Returns the phoneme list and whether the fallback produced it.
  std::pair<std::vector<std::string>, bool> resolve(const std::string& subword) const {
    auto it = entries.find(subword);
    if (it != entries.end()) return {it->second, false};
    return {letter_to_sound(subword), true};
  }
};

inline void save_lexicon(const std::string& path, const Lexicon& lex) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write lexicon: " + path);
  for (const auto& [sub, phones] : lex.entries) {
    os << sub << "\t";
    for (std::size_t i = 0; i < phones.size(); ++i) os << (i ? " " : "") << phones[i];
    os << "\n";
  }
}

inline Lexicon load_lexicon(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open lexicon: " + path);
  Lexicon lex;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw ConfigError("lexicon line missing tab: " + line);
    std::string sub = line.substr(0, tab);
    std::istringstream rest(line.substr(tab + 1));
    std::vector<std::string> phones;
    std::string p;
    while (rest >> p) phones.push_back(p);
    if (phones.empty()) throw ConfigError("lexicon entry with no phonemes: " + sub);
    lex.entries[sub] = std::move(phones);
  }
  return lex;
}

struct PhonemeSequence {
  std::vector<std::string> phonemes;
  // per input token: (start index into phonemes, count)
  std::vector<std::pair<std::size_t, std::size_t>> boundaries;
  std::vector<bool> used_fallback;
};

inline PhonemeSequence to_phonemes(const TokenSequence& tokens, const Vocabulary& vocab,
                                   const Lexicon& lex) {
  PhonemeSequence out;
  for (TokenId id : tokens) {
    if (id == vocab.special_id())
      throw ContractError("to_phonemes: special token has no pronunciation");
    auto [phones, fell_back] = lex.resolve(vocab.entry(id));
    out.boundaries.emplace_back(out.phonemes.size(), phones.size());
    out.used_fallback.push_back(fell_back);
    out.phonemes.insert(out.phonemes.end(), phones.begin(), phones.end());
  }
  return out;
}

}  // namespace semcom::tok

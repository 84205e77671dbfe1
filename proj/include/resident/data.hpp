#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "resident/errors.hpp"
#include "resident/layers.hpp"

namespace resident {

// One labelled sentence. `bytes` are the exact UTF-8 bytes of `text`,
// untruncated; truncation to max_len happens at batching time.
struct Example {
    std::string text;
    std::vector<std::uint8_t> bytes;
    std::string label;
};

using Dataset = std::vector<Example>;

// Dense, ordered label set with a bidirectional code <-> index map.
class LabelVocab {
  public:
    LabelVocab() = default;

    // codes are stored sorted lexicographically, duplicates collapsed
    static LabelVocab from_labels(const std::vector<std::string>& labels) {
        std::set<std::string> uniq(labels.begin(), labels.end());
        LabelVocab v;
        for (const auto& c : uniq) {
            v.index_.emplace(c, static_cast<std::int32_t>(v.codes_.size()));
            v.codes_.push_back(c);
        }
        return v;
    }

    // preserves the given order (model files store their vocab verbatim)
    static LabelVocab from_ordered(std::vector<std::string> codes) {
        LabelVocab v;
        v.codes_ = std::move(codes);
        for (std::size_t i = 0; i < v.codes_.size(); ++i) {
            if (!v.index_.emplace(v.codes_[i], static_cast<std::int32_t>(i)).second)
                throw ContractError("duplicate label '" + v.codes_[i] + "'");
        }
        return v;
    }

    std::int32_t index_of(const std::string& code) const {
        auto it = index_.find(code);
        if (it == index_.end()) throw ContractError("unknown label '" + code + "'");
        return it->second;
    }

    bool contains(const std::string& code) const { return index_.count(code) > 0; }
    const std::string& at(std::size_t i) const { return codes_.at(i); }
    std::size_t size() const { return codes_.size(); }
    const std::vector<std::string>& codes() const { return codes_; }

    bool operator==(const LabelVocab& o) const { return codes_ == o.codes_; }

  private:
    std::vector<std::string> codes_;
    std::unordered_map<std::string, std::int32_t> index_;
};

// ---------------------------------------------------------------------------
// byte codec
// ---------------------------------------------------------------------------

// raw byte values as ids, truncated at max_len, right-padded with PAD
inline std::vector<std::int32_t> encode_bytes(std::string_view text, std::size_t max_len) {
    std::vector<std::int32_t> ids(max_len, kPadId);
    const std::size_t n = std::min(text.size(), max_len);
    for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<std::uint8_t>(text[i]);
    return ids;
}

// inverse of encode_bytes with padding stripped
inline std::string decode_bytes(const std::vector<std::int32_t>& ids) {
    std::string out;
    for (std::int32_t id : ids) {
        if (id == kPadId) continue;
        if (id < 0 || id > 255)
            throw ContractError("decode_bytes: id " + std::to_string(id) + " is not a byte");
        out.push_back(static_cast<char>(static_cast<std::uint8_t>(id)));
    }
    return out;
}

inline bool valid_utf8(std::string_view s) {
    std::size_t i = 0;
    const std::size_t n = s.size();
    auto byte = [&](std::size_t j) { return static_cast<std::uint8_t>(s[j]); };
    while (i < n) {
        const std::uint8_t b = byte(i);
        if (b < 0x80) {
            ++i;
        } else if ((b & 0xE0) == 0xC0) {
            if (b < 0xC2) return false;  // overlong
            if (i + 1 >= n || (byte(i + 1) & 0xC0) != 0x80) return false;
            i += 2;
        } else if ((b & 0xF0) == 0xE0) {
            if (i + 2 >= n || (byte(i + 1) & 0xC0) != 0x80 || (byte(i + 2) & 0xC0) != 0x80)
                return false;
            if (b == 0xE0 && byte(i + 1) < 0xA0) return false;  // overlong
            if (b == 0xED && byte(i + 1) >= 0xA0) return false;  // surrogate
            i += 3;
        } else if ((b & 0xF8) == 0xF0) {
            if (b > 0xF4) return false;  // above U+10FFFF
            if (i + 3 >= n || (byte(i + 1) & 0xC0) != 0x80 || (byte(i + 2) & 0xC0) != 0x80 ||
                (byte(i + 3) & 0xC0) != 0x80)
                return false;
            if (b == 0xF0 && byte(i + 1) < 0x90) return false;  // overlong
            if (b == 0xF4 && byte(i + 1) >= 0x90) return false;
            i += 4;
        } else {
            return false;
        }
    }
    return true;
}

// ---------------------------------------------------------------------------
// TSV ingestion: "sentence<TAB>label", LF or CRLF
// ---------------------------------------------------------------------------

struct LoadResult {
    Dataset data;
    LabelVocab vocab;
    std::size_t skipped_invalid_utf8 = 0;
};

inline LoadResult load_tsv(std::istream& in, const std::string& name = "<stream>",
                           std::ostream* warn = &std::cerr) {
    LoadResult res;
    std::vector<std::string> labels;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos)
            throw ParseError(name + ": expected sentence<TAB>label", line_no);
        if (line.find('\t', tab + 1) != std::string::npos)
            throw ParseError(name + ": more than one TAB", line_no);
        std::string text = line.substr(0, tab);
        std::string label = line.substr(tab + 1);
        if (label.empty()) throw ParseError(name + ": empty label", line_no);
        if (!valid_utf8(text)) {
            ++res.skipped_invalid_utf8;
            continue;
        }
        Example ex;
        ex.bytes.assign(text.begin(), text.end());
        ex.text = std::move(text);
        ex.label = std::move(label);
        res.data.push_back(std::move(ex));
        labels.push_back(res.data.back().label);
    }
    if (line_no == 0) throw ParseError(name + ": empty file", 0);
    if (res.data.empty()) throw ParseError(name + ": no records", line_no);
    if (res.skipped_invalid_utf8 > 0 && warn)
        *warn << "warning: " << name << ": skipped " << res.skipped_invalid_utf8
              << " record(s) with invalid UTF-8\n";
    res.vocab = LabelVocab::from_labels(labels);
    return res;
}

inline LoadResult load_tsv(const std::string& path, std::ostream* warn = &std::cerr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path + "'");
    return load_tsv(in, path, warn);
}

inline void save_tsv(const Dataset& data, std::ostream& out) {
    for (const Example& ex : data) out << ex.text << '\t' << ex.label << '\n';
}

inline void save_tsv(const Dataset& data, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    save_tsv(data, out);
}

// ---------------------------------------------------------------------------
// tweet cleanup
// ---------------------------------------------------------------------------

namespace detail {

inline bool is_space(char c) {
    return std::isspace(static_cast<unsigned char>(c)) != 0;
}

inline bool word_char(char c) {
    return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
}

}  // namespace detail

// Deletes, in order: hyperlinks (maximal non-space runs starting http://,
// https:// or www.), usernames (@ plus word characters) and hashtags (# plus
// non-space characters), then collapses whitespace runs and trims the ends.
inline std::string clean_tweet(std::string_view text) {
    // pass 1: drop link tokens wholesale
    std::string s;
    s.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        if (detail::is_space(text[i])) {
            s.push_back(text[i]);
            ++i;
            continue;
        }
        std::size_t end = i;
        while (end < text.size() && !detail::is_space(text[end])) ++end;
        std::string_view tok = text.substr(i, end - i);
        if (!(tok.starts_with("http://") || tok.starts_with("https://") ||
              tok.starts_with("www.")))
            s.append(tok);
        i = end;
    }
    // pass 2: strip @names
    std::string s2;
    s2.reserve(s.size());
    for (i = 0; i < s.size();) {
        if (s[i] == '@' && i + 1 < s.size() && detail::word_char(s[i + 1])) {
            i += 2;
            while (i < s.size() && detail::word_char(s[i])) ++i;
        } else {
            s2.push_back(s[i]);
            ++i;
        }
    }
    // pass 3: strip #tags
    std::string s3;
    s3.reserve(s2.size());
    for (i = 0; i < s2.size();) {
        if (s2[i] == '#' && i + 1 < s2.size() && !detail::is_space(s2[i + 1])) {
            i += 2;
            while (i < s2.size() && !detail::is_space(s2[i])) ++i;
        } else {
            s3.push_back(s2[i]);
            ++i;
        }
    }
    // collapse whitespace, trim
    std::string out;
    out.reserve(s3.size());
    bool pending_space = false;
    for (char c : s3) {
        if (detail::is_space(c)) {
            pending_space = !out.empty();
        } else {
            if (pending_space) out.push_back(' ');
            pending_space = false;
            out.push_back(c);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// English-tweet filtering
// ---------------------------------------------------------------------------

// Keeps exactly the examples where `is_english` answers false.
inline Dataset filter_english(const Dataset& data,
                              const std::function<bool(const std::string&)>& is_english) {
    Dataset out;
    out.reserve(data.size());
    for (const Example& ex : data)
        if (!is_english(ex.text)) out.push_back(ex);
    return out;
}

// Default heuristic: at least 2 hits among {the, and, you, for, that} per 10
// tokens. Tokens are whitespace-split, lowercased, with non-alphanumeric
// edges stripped.
inline bool english_stopword_predicate(const std::string& text) {
    static const std::set<std::string> kStopwords = {"the", "and", "you", "for", "that"};
    std::istringstream is(text);
    std::string tok;
    std::size_t tokens = 0, hits = 0;
    while (is >> tok) {
        ++tokens;
        std::size_t b = 0, e = tok.size();
        while (b < e && !std::isalnum(static_cast<unsigned char>(tok[b]))) ++b;
        while (e > b && !std::isalnum(static_cast<unsigned char>(tok[e - 1]))) --e;
        std::string w = tok.substr(b, e - b);
        std::transform(w.begin(), w.end(), w.begin(),
                       [](unsigned char c) { return std::tolower(c); });
        if (kStopwords.count(w)) ++hits;
    }
    return tokens > 0 && hits * 10 >= 2 * tokens;
}

// ---------------------------------------------------------------------------
// language groups
// ---------------------------------------------------------------------------

using GroupTable = std::map<std::string, std::set<std::string>>;

// The five similar-language groups of the 12-way task; disjoint, and their
// union is the full task vocabulary.
inline const GroupTable& language_groups() {
    static const GroupTable table = {
        {"es", {"es-ar", "es-es", "es-mx"}},
        {"fr", {"fr-ca", "fr-fr"}},
        {"id-my", {"id", "my"}},
        {"pt", {"pt-br", "pt-pt"}},
        {"hbs", {"hr", "bs", "sr"}},
    };
    return table;
}

// The Twitter subtasks cover this subset of the task-A languages.
inline const std::set<std::string>& b_task_group() {
    static const std::set<std::string> group = {"pt-br", "pt-pt", "hr", "bs", "sr"};
    return group;
}

// resolves "B" or one of the group names above
inline const std::set<std::string>& named_group(const std::string& name) {
    if (name == "B") return b_task_group();
    const GroupTable& t = language_groups();
    auto it = t.find(name);
    if (it == t.end()) throw ConfigError("unknown language group '" + name + "'");
    return it->second;
}

}  // namespace resident

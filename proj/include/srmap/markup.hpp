#pragma once

// Strict XML subset used for scene descriptions.
//
//   document  := prolog? misc* element misc*
//   prolog    := '<?' ... '?>'
//   misc      := comment | whitespace
//   comment   := '<!--' ... '-->'
//   element   := '<' name attr* '/>' | '<' name attr* '>' content '</' name '>'
//   attr      := name '=' ( '"' chars '"' | '\'' chars '\'' )
//   content   := ( element | comment | text )*
//
// Entities: &amp; &lt; &gt; &quot; &apos;. No DTDs, CDATA or namespaces.
// Attribute names are unique per element. Mixed text inside one element is
// concatenated.

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "srmap/common.hpp"

namespace srmap::markup {

struct Node {
  std::string name;
  std::vector<std::pair<std::string, std::string>> attributes;
  std::vector<Node> children;
  std::string text;
  int line = 0;
  int column = 0;

  const std::string* attribute(std::string_view key) const {
    for (const auto& [k, v] : attributes)
      if (k == key) return &v;
    return nullptr;
  }

  const Node* child(std::string_view child_name) const {
    for (const auto& c : children)
      if (c.name == child_name) return &c;
    return nullptr;
  }

  friend bool operator==(const Node&, const Node&) = default;
};

namespace detail {

class Parser {
 public:
  explicit Parser(std::string_view text) : s_(text) {}

  Node parse_document() {
    skip_ws();
    if (starts_with("<?")) {
      const auto end = s_.find("?>", pos_);
      if (end == std::string_view::npos) fail("unterminated prolog");
      advance_to(end + 2);
    }
    skip_misc();
    if (at_end() || peek() != '<') fail("expected root element");
    Node root = parse_element();
    skip_misc();
    if (!at_end()) fail("unexpected content after root element");
    return root;
  }

 private:
  std::string_view s_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;

  [[noreturn]] void fail(const std::string& msg) const { throw ParseError("markup: " + msg, line_, col_); }

  bool at_end() const { return pos_ >= s_.size(); }
  char peek() const { return s_[pos_]; }
  bool starts_with(std::string_view p) const { return s_.substr(pos_, p.size()) == p; }

  void advance() {
    if (s_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }
  void advance_to(std::size_t target) {
    while (pos_ < target) advance();
  }
  void expect(char c) {
    if (at_end() || peek() != c) fail(std::string("expected '") + c + "'");
    advance();
  }
  void skip_ws() {
    while (!at_end() && std::isspace(static_cast<unsigned char>(peek()))) advance();
  }
  void skip_comment() {
    const auto end = s_.find("-->", pos_ + 4);
    if (end == std::string_view::npos) fail("unterminated comment");
    advance_to(end + 3);
  }
  void skip_misc() {
    while (true) {
      skip_ws();
      if (starts_with("<!--"))
        skip_comment();
      else
        return;
    }
  }

  static bool name_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
  static bool name_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.' || c == ':';
  }

  std::string parse_name() {
    if (at_end() || !name_start(peek())) fail("expected a name");
    const std::size_t start = pos_;
    while (!at_end() && name_char(peek())) advance();
    return std::string(s_.substr(start, pos_ - start));
  }

  std::string decode_entities(std::string_view raw, int line, int col) const {
    std::string out;
    out.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (raw[i] != '&') {
        out.push_back(raw[i]);
        continue;
      }
      const auto semi = raw.find(';', i);
      if (semi == std::string_view::npos) throw ParseError("markup: unterminated entity", line, col);
      const auto ent = raw.substr(i + 1, semi - i - 1);
      if (ent == "amp") out.push_back('&');
      else if (ent == "lt") out.push_back('<');
      else if (ent == "gt") out.push_back('>');
      else if (ent == "quot") out.push_back('"');
      else if (ent == "apos") out.push_back('\'');
      else throw ParseError("markup: unknown entity '&" + std::string(ent) + ";'", line, col);
      i = semi;
    }
    return out;
  }

  Node parse_element() {
    Node node;
    node.line = line_;
    node.column = col_;
    expect('<');
    node.name = parse_name();
    while (true) {
      skip_ws();
      if (at_end()) fail("unclosed element <" + node.name + ">");
      if (peek() == '/') {
        advance();
        expect('>');
        return node;
      }
      if (peek() == '>') {
        advance();
        break;
      }
      const int aline = line_, acol = col_;
      std::string key = parse_name();
      if (node.attribute(key)) throw ParseError("markup: duplicate attribute '" + key + "'", aline, acol);
      skip_ws();
      expect('=');
      skip_ws();
      if (at_end() || (peek() != '"' && peek() != '\'')) fail("expected quoted attribute value");
      const char quote = peek();
      advance();
      const int vline = line_, vcol = col_;
      const std::size_t start = pos_;
      while (!at_end() && peek() != quote) {
        if (peek() == '<') fail("'<' in attribute value");
        advance();
      }
      if (at_end()) fail("unterminated attribute value");
      std::string value = decode_entities(s_.substr(start, pos_ - start), vline, vcol);
      advance();
      node.attributes.emplace_back(std::move(key), std::move(value));
    }
    // content
    while (true) {
      if (at_end()) throw ParseError("markup: unclosed element <" + node.name + ">", node.line, node.column);
      if (starts_with("<!--")) {
        skip_comment();
      } else if (starts_with("</")) {
        advance();
        advance();
        const std::string closing = parse_name();
        if (closing != node.name) fail("mismatched closing tag </" + closing + "> for <" + node.name + ">");
        skip_ws();
        expect('>');
        break;
      } else if (peek() == '<') {
        node.children.push_back(parse_element());
      } else {
        const int tline = line_, tcol = col_;
        const std::size_t start = pos_;
        while (!at_end() && peek() != '<') advance();
        node.text += decode_entities(s_.substr(start, pos_ - start), tline, tcol);
      }
    }
    node.text = std::string(trim(node.text));
    return node;
  }
};

inline void escape_into(std::string& out, std::string_view text) {
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
}

inline void serialize_into(std::string& out, const Node& n, int depth) {
  out.append(static_cast<std::size_t>(depth) * 2, ' ');
  out += '<';
  out += n.name;
  for (const auto& [k, v] : n.attributes) {
    out += ' ';
    out += k;
    out += "=\"";
    escape_into(out, v);
    out += '"';
  }
  if (n.children.empty() && n.text.empty()) {
    out += "/>\n";
    return;
  }
  out += '>';
  if (n.children.empty()) {
    escape_into(out, n.text);
  } else {
    out += '\n';
    if (!n.text.empty()) {
      out.append(static_cast<std::size_t>(depth + 1) * 2, ' ');
      escape_into(out, n.text);
      out += '\n';
    }
    for (const auto& c : n.children) serialize_into(out, c, depth + 1);
    out.append(static_cast<std::size_t>(depth) * 2, ' ');
  }
  out += "</";
  out += n.name;
  out += ">\n";
}

}  // namespace detail

inline Node parse(std::string_view text) { return detail::Parser(text).parse_document(); }

inline std::string serialize(const Node& root) {
  std::string out;
  detail::serialize_into(out, root, 0);
  return out;
}

}  // namespace srmap::markup

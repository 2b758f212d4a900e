#include "ultrag/query_dsl.hpp"

#include <algorithm>
#include <cctype>
#include <optional>

namespace ultrag {

namespace {

constexpr std::size_t kMaxNesting = 256;
constexpr std::string_view kInvSuffix = "_inv";

bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

enum class Tok { End, And, LParen, RParen, Comma, Arrow, Entity, Relation, Mention };

const char* tok_name(Tok t) {
  switch (t) {
    case Tok::End: return "end of input";
    case Tok::And: return "'AND'";
    case Tok::LParen: return "'('";
    case Tok::RParen: return "')'";
    case Tok::Comma: return "','";
    case Tok::Arrow: return "'->'";
    case Tok::Entity: return "entity id";
    case Tok::Relation: return "relation id";
    case Tok::Mention: return "mention";
  }
  return "?";
}

struct Token {
  Tok kind = Tok::End;
  std::string_view text;
  std::size_t offset = 0;
};

/// Shared tokenizer for both surface forms.
class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) { advance(); }

  const Token& peek() const { return cur_; }

  Token take() {
    Token t = cur_;
    advance();
    return t;
  }

  Token expect(Tok kind, const char* context) {
    if (cur_.kind != kind)
      throw ParseError(cur_.offset, std::string("expected ") + tok_name(kind) + " " + context + ", found " +
                                        tok_name(cur_.kind));
    return take();
  }

 private:
  void advance() {
    while (pos_ < src_.size() && is_space(src_[pos_])) ++pos_;
    cur_.offset = pos_;
    if (pos_ >= src_.size()) {
      cur_ = {Tok::End, {}, pos_};
      return;
    }
    const char c = src_[pos_];
    auto single = [&](Tok k) {
      cur_ = {k, src_.substr(pos_, 1), pos_};
      ++pos_;
    };
    switch (c) {
      case '(': return single(Tok::LParen);
      case ')': return single(Tok::RParen);
      case ',': return single(Tok::Comma);
      default: break;
    }
    if (c == '-') {
      if (pos_ + 1 < src_.size() && src_[pos_ + 1] == '>') {
        cur_ = {Tok::Arrow, src_.substr(pos_, 2), pos_};
        pos_ += 2;
        return;
      }
      throw ParseError(pos_, "stray '-' (did you mean '->'?)");
    }
    if (c == '<') {
      auto close = src_.find('>', pos_ + 1);
      if (close == std::string_view::npos) throw ParseError(pos_, "unterminated mention");
      auto inner = src_.substr(pos_ + 1, close - pos_ - 1);
      if (inner.find('<') != std::string_view::npos) throw ParseError(pos_, "'<' inside mention");
      while (!inner.empty() && is_space(inner.front())) inner.remove_prefix(1);
      while (!inner.empty() && is_space(inner.back())) inner.remove_suffix(1);
      if (inner.empty()) throw ParseError(pos_, "empty mention");
      cur_ = {Tok::Mention, inner, pos_};
      pos_ = close + 1;
      return;
    }
    // Word token: letters, digits, underscore.
    std::size_t end = pos_;
    while (end < src_.size() &&
           (std::isalnum(static_cast<unsigned char>(src_[end])) != 0 || src_[end] == '_'))
      ++end;
    if (end == pos_) throw ParseError(pos_, std::string("unexpected character '") + c + "'");
    auto word = src_.substr(pos_, end - pos_);
    cur_.offset = pos_;
    cur_.text = word;
    if (word == "AND") {
      cur_.kind = Tok::And;
    } else if (word.size() > 1 && word[0] == 'Q' && std::all_of(word.begin() + 1, word.end(), is_digit)) {
      cur_.kind = Tok::Entity;
    } else if (valid_relation(word)) {
      cur_.kind = Tok::Relation;
    } else {
      throw ParseError(pos_, "unknown token '" + std::string(word) + "'");
    }
    pos_ = end;
  }

  static bool valid_relation(std::string_view w) {
    if (w.size() > kInvSuffix.size() && w.substr(w.size() - kInvSuffix.size()) == kInvSuffix)
      w.remove_suffix(kInvSuffix.size());
    return w.size() > 1 && w[0] == 'P' && std::all_of(w.begin() + 1, w.end(), is_digit);
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  Token cur_;
};

EntityRef anchor_from(const Token& t) {
  return t.kind == Tok::Entity ? EntityRef::entity(std::string(t.text)) : EntityRef::mention(std::string(t.text));
}

class DslParser {
 public:
  explicit DslParser(std::string_view src) : lex_(src) {}

  Query parse() {
    Query q = query(0);
    if (lex_.peek().kind != Tok::End)
      throw ParseError(lex_.peek().offset, std::string("unexpected ") + tok_name(lex_.peek().kind) + " after query");
    return q;
  }

 private:
  Query query(std::size_t depth) {
    if (depth > kMaxNesting) throw ParseError(lex_.peek().offset, "query nested too deeply");
    const Token head = lex_.peek();
    std::optional<EntityRef> anchor;
    Query base;
    if (head.kind == Tok::Entity || head.kind == Tok::Mention) {
      anchor = anchor_from(lex_.take());
    } else if (head.kind == Tok::And) {
      base = intersection(depth);
    } else {
      throw ParseError(head.offset, std::string("expected entity, mention or AND, found ") + tok_name(head.kind));
    }
    std::vector<RelationToken> rels;
    while (lex_.peek().kind == Tok::Arrow) {
      lex_.take();
      auto r = lex_.expect(Tok::Relation, "after '->'");
      rels.push_back(RelationToken::parse(r.text));
    }
    if (anchor) {
      if (rels.empty()) throw ParseError(lex_.peek().offset, "entity must be followed by '-> relation'");
      return Query::leaf(std::move(*anchor), std::move(rels));
    }
    return rels.empty() ? base : Query::project(std::move(base), std::move(rels));
  }

  Query intersection(std::size_t depth) {
    lex_.expect(Tok::And, "");
    lex_.expect(Tok::LParen, "after AND");
    if (lex_.peek().kind == Tok::RParen) throw ParseError(lex_.peek().offset, "empty AND");
    std::vector<Query> children;
    children.push_back(query(depth + 1));
    while (lex_.peek().kind == Tok::Comma) {
      lex_.take();
      children.push_back(query(depth + 1));
    }
    auto close = lex_.expect(Tok::RParen, "to close AND");
    if (children.size() < 2) throw ParseError(close.offset, "AND needs at least two operands");
    return Query::intersection(std::move(children));
  }

  Lexer lex_;
};

class BetaeParser {
 public:
  explicit BetaeParser(std::string_view src) : lex_(src) {}

  Query parse() {
    Query q = tuple(0);
    if (lex_.peek().kind != Tok::End)
      throw ParseError(lex_.peek().offset, std::string("unexpected ") + tok_name(lex_.peek().kind) + " after query");
    return q;
  }

 private:
  // '(' X ',' Y ')'
  Query tuple(std::size_t depth) {
    lex_.expect(Tok::LParen, "to open a tuple");
    return tuple_after_open(depth);
  }

  // Same as tuple() with the opening '(' already consumed.
  Query tuple_after_open(std::size_t depth) {
    if (depth > kMaxNesting) throw ParseError(lex_.peek().offset, "query nested too deeply");
    const Token first = lex_.peek();
    if (first.kind == Tok::Entity || first.kind == Tok::Mention) {
      auto anchor = anchor_from(lex_.take());
      lex_.expect(Tok::Comma, "after leaf entity");
      auto rel = relation_tuple();
      lex_.expect(Tok::RParen, "to close projection");
      return Query::leaf(std::move(anchor), {std::move(rel)});
    }
    if (first.kind != Tok::LParen)
      throw ParseError(first.offset, std::string("expected entity or '(' in tuple, found ") + tok_name(first.kind));
    Query lhs = tuple(depth + 1);
    lex_.expect(Tok::Comma, "between tuple elements");
    lex_.expect(Tok::LParen, "to open relation tuple or query");
    if (lex_.peek().kind == Tok::Relation) {
      auto rel = finish_relation_tuple();
      lex_.expect(Tok::RParen, "to close projection");
      return Query::project(std::move(lhs), {std::move(rel)});
    }
    Query rhs = tuple_after_open(depth + 1);
    lex_.expect(Tok::RParen, "to close intersection (only binary intersections are allowed)");
    std::vector<Query> kids;
    kids.push_back(std::move(lhs));
    kids.push_back(std::move(rhs));
    return Query::intersection(std::move(kids));
  }

  // '(' R ',' ')'
  RelationToken relation_tuple() {
    lex_.expect(Tok::LParen, "to open relation tuple");
    return finish_relation_tuple();
  }

  RelationToken finish_relation_tuple() {
    auto r = lex_.expect(Tok::Relation, "in relation tuple");
    lex_.expect(Tok::Comma, "after relation (relation tuples are written '(P1,)')");
    lex_.expect(Tok::RParen, "to close relation tuple");
    return RelationToken::parse(r.text);
  }

  Lexer lex_;
};

void write_dsl(const Query& q, std::string& out) {
  switch (q.kind) {
    case Query::Kind::Leaf:
      out += q.anchor.is_mention() ? "<" + q.anchor.text + ">" : q.anchor.text;
      break;
    case Query::Kind::Chain:
      write_dsl(q.children.front(), out);
      break;
    case Query::Kind::Intersection:
      out += "AND(";
      for (std::size_t i = 0; i < q.children.size(); ++i) {
        if (i) out += ", ";
        write_dsl(q.children[i], out);
      }
      out += ")";
      return;
  }
  for (const auto& r : q.relations) {
    out += " -> ";
    out += r.str();
  }
}

std::string betae_anchor(const EntityRef& a) { return a.is_mention() ? "<" + a.text + ">" : a.text; }

std::string write_betae(const Query& q) {
  switch (q.kind) {
    case Query::Kind::Leaf: {
      std::string s = "(" + betae_anchor(q.anchor) + ", (" + q.relations.front().str() + ",))";
      for (std::size_t i = 1; i < q.relations.size(); ++i) s = "(" + s + ", (" + q.relations[i].str() + ",))";
      return s;
    }
    case Query::Kind::Chain: {
      std::string s = write_betae(q.children.front());
      for (const auto& r : q.relations) s = "(" + s + ", (" + r.str() + ",))";
      return s;
    }
    case Query::Kind::Intersection:
      if (q.children.size() != 2)
        throw std::invalid_argument("BetaE only supports binary intersections");
      return "(" + write_betae(q.children[0]) + ", " + write_betae(q.children[1]) + ")";
  }
  return {};
}

std::size_t paren_depth(std::string_view s) {
  std::size_t depth = 0;
  std::size_t best = 0;
  bool in_mention = false;
  for (char c : s) {
    if (in_mention) {
      in_mention = c != '>';
      continue;
    }
    if (c == '<') in_mention = true;
    if (c == '(') best = std::max(best, ++depth);
    if (c == ')' && depth > 0) --depth;
  }
  return best;
}

}  // namespace

RelationToken RelationToken::parse(std::string_view token) {
  RelationToken r;
  if (token.size() > kInvSuffix.size() && token.substr(token.size() - kInvSuffix.size()) == kInvSuffix) {
    r.inverse = true;
    token.remove_suffix(kInvSuffix.size());
  }
  if (token.size() < 2 || token[0] != 'P' || !std::all_of(token.begin() + 1, token.end(), is_digit))
    throw std::invalid_argument("malformed relation token '" + std::string(token) + "'");
  r.base = std::string(token);
  return r;
}

Query Query::leaf(EntityRef anchor, std::vector<RelationToken> relations) {
  if (relations.empty()) throw std::invalid_argument("leaf projection needs at least one relation");
  Query q;
  q.kind = Kind::Leaf;
  q.anchor = std::move(anchor);
  q.relations = std::move(relations);
  return q;
}

Query Query::intersection(std::vector<Query> children) {
  if (children.size() < 2) throw std::invalid_argument("intersection needs at least two children");
  Query q;
  q.kind = Kind::Intersection;
  q.children = std::move(children);
  return q;
}

Query Query::project(Query q, std::vector<RelationToken> relations) {
  if (relations.empty()) return q;
  if (q.kind != Kind::Intersection) {
    q.relations.insert(q.relations.end(), std::make_move_iterator(relations.begin()),
                       std::make_move_iterator(relations.end()));
    return q;
  }
  Query c;
  c.kind = Kind::Chain;
  c.relations = std::move(relations);
  c.children.push_back(std::move(q));
  return c;
}

std::size_t Query::num_leaves() const {
  if (kind == Kind::Leaf) return 1;
  std::size_t n = 0;
  for (const auto& c : children) n += c.num_leaves();
  return n;
}

std::vector<EntityRef> Query::leaves() const {
  std::vector<EntityRef> out;
  auto walk = [&out](const Query& q, auto& self) -> void {
    if (q.kind == Kind::Leaf) {
      out.push_back(q.anchor);
      return;
    }
    for (const auto& c : q.children) self(c, self);
  };
  walk(*this, walk);
  return out;
}

std::size_t Query::depth() const {
  std::size_t below = 0;
  for (const auto& c : children) below = std::max(below, c.depth());
  return below + relations.size();
}

std::vector<Mention> mentions_of(const Query& q) {
  std::vector<Mention> out;
  auto leaves = q.leaves();
  for (std::size_t i = 0; i < leaves.size(); ++i)
    if (leaves[i].is_mention()) out.push_back({leaves[i].text, i});
  return out;
}

Query parse_dsl(std::string_view text) { return DslParser(text).parse(); }

std::string serialize_dsl(const Query& q) {
  std::string out;
  write_dsl(q, out);
  return out;
}

Query parse_betae(std::string_view text) { return BetaeParser(text).parse(); }

std::string serialize_betae(const Query& q) { return write_betae(q); }

std::string betae_to_dsl(std::string_view betae) { return serialize_dsl(parse_betae(betae)); }

Query parse_query(std::string_view text, QueryFormat format) {
  return format == QueryFormat::Dsl ? parse_dsl(text) : parse_betae(text);
}

std::size_t max_nesting_depth(std::string_view text, QueryFormat format) {
  (void)parse_query(text, format);
  return paren_depth(text);
}

std::string query_class(const Query& q) {
  switch (q.kind) {
    case Query::Kind::Leaf:
      return "(" + std::to_string(q.relations.size()) + ")";
    case Query::Kind::Chain: {
      const auto n = q.relations.size();
      return "(" + (n > 1 ? std::to_string(n) : std::string()) + query_class(q.children.front()) + ")";
    }
    case Query::Kind::Intersection: {
      std::vector<std::pair<std::size_t, std::string>> parts;
      for (const auto& c : q.children) parts.emplace_back(c.depth(), query_class(c));
      std::sort(parts.begin(), parts.end(), std::greater<>());
      std::string out;
      for (const auto& p : parts) out += p.second;
      return out;
    }
  }
  return {};
}

nlohmann::json query_to_json(const Query& q) {
  nlohmann::json j;
  auto rels = nlohmann::json::array();
  for (const auto& r : q.relations) rels.push_back(r.str());
  switch (q.kind) {
    case Query::Kind::Leaf:
      j["kind"] = "leaf";
      j["anchor"] = q.anchor.is_mention() ? nlohmann::json{{"mention", q.anchor.text}}
                                          : nlohmann::json{{"entity", q.anchor.text}};
      j["relations"] = rels;
      break;
    case Query::Kind::Chain:
      j["kind"] = "chain";
      j["child"] = query_to_json(q.children.front());
      j["relations"] = rels;
      break;
    case Query::Kind::Intersection: {
      j["kind"] = "and";
      auto kids = nlohmann::json::array();
      for (const auto& c : q.children) kids.push_back(query_to_json(c));
      j["children"] = kids;
      break;
    }
  }
  return j;
}

namespace {

std::vector<RelationToken> relations_from_json(const nlohmann::json& j) {
  if (!j.contains("relations") || !j["relations"].is_array() || j["relations"].empty())
    throw std::invalid_argument("query node needs a non-empty 'relations' array");
  std::vector<RelationToken> out;
  for (const auto& r : j["relations"]) {
    if (!r.is_string()) throw std::invalid_argument("relation must be a string");
    out.push_back(RelationToken::parse(r.get<std::string>()));
  }
  return out;
}

Query from_json(const nlohmann::json& j, std::size_t depth) {
  if (depth > kMaxNesting) throw std::invalid_argument("query nested too deeply");
  if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string())
    throw std::invalid_argument("query node must be an object with a string 'kind'");
  const auto kind = j["kind"].get<std::string>();
  if (kind == "leaf") {
    const auto& a = j.value("anchor", nlohmann::json());
    if (!a.is_object()) throw std::invalid_argument("leaf needs an 'anchor' object");
    if (a.contains("entity") && a["entity"].is_string()) {
      auto id = a["entity"].get<std::string>();
      if (id.size() < 2 || id[0] != 'Q' || !std::all_of(id.begin() + 1, id.end(), is_digit))
        throw std::invalid_argument("malformed entity id '" + id + "'");
      return Query::leaf(EntityRef::entity(id), relations_from_json(j));
    }
    if (a.contains("mention") && a["mention"].is_string() && !a["mention"].get<std::string>().empty())
      return Query::leaf(EntityRef::mention(a["mention"].get<std::string>()), relations_from_json(j));
    throw std::invalid_argument("anchor must hold 'entity' or 'mention'");
  }
  if (kind == "chain") {
    if (!j.contains("child")) throw std::invalid_argument("chain needs a 'child'");
    return Query::project(from_json(j["child"], depth + 1), relations_from_json(j));
  }
  if (kind == "and") {
    if (!j.contains("children") || !j["children"].is_array() || j["children"].size() < 2)
      throw std::invalid_argument("'and' needs at least two children");
    std::vector<Query> kids;
    for (const auto& c : j["children"]) kids.push_back(from_json(c, depth + 1));
    return Query::intersection(std::move(kids));
  }
  throw std::invalid_argument("unknown query node kind '" + kind + "'");
}

}  // namespace

Query query_from_json(const nlohmann::json& j) { return from_json(j, 0); }

}  // namespace ultrag

#include "concordia/logic.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace concordia::logic {

ParseError::ParseError(std::size_t line, std::size_t column, const std::string& message)
    : std::runtime_error("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " +
                         message),
      line_(line),
      column_(column) {}

bool Theory::declares(std::string_view predicate) const {
  return predicates.find(std::string(predicate)) != predicates.end();
}

namespace {

enum class Tok {
  identifier,
  number,
  string,
  double_colon,
  colon,
  arrow,
  double_arrow,
  amp,
  lparen,
  rparen,
  comma,
  dot,
  plus,
  equals,
  slash,
  end
};

struct Token {
  Tok kind = Tok::end;
  std::string text;
  double number = 0.0;
  std::size_t line = 1;
  std::size_t column = 1;
};

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  Token next() {
    skip_space_and_comments();
    Token t;
    t.line = line_;
    t.column = col_;
    if (pos_ >= src_.size()) {
      t.kind = Tok::end;
      return t;
    }
    char c = src_[pos_];
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t start = pos_;
      while (pos_ < src_.size() && (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) {
        advance();
      }
      t.kind = Tok::identifier;
      t.text = std::string(src_.substr(start, pos_ - start));
      return t;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) ||
        (c == '-' && pos_ + 1 < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_ + 1])))) {
      return lex_number(t);
    }
    if (c == '"') {
      return lex_string(t);
    }
    auto single = [&](Tok kind, std::size_t len) {
      t.kind = kind;
      t.text = std::string(src_.substr(pos_, len));
      for (std::size_t i = 0; i < len; ++i) advance();
      return t;
    };
    if (starts_with("<->")) return single(Tok::double_arrow, 3);
    if (starts_with("->")) return single(Tok::arrow, 2);
    if (starts_with("::")) return single(Tok::double_colon, 2);
    switch (c) {
      case ':': return single(Tok::colon, 1);
      case '&': return single(Tok::amp, 1);
      case '(': return single(Tok::lparen, 1);
      case ')': return single(Tok::rparen, 1);
      case ',': return single(Tok::comma, 1);
      case '.': return single(Tok::dot, 1);
      case '+': return single(Tok::plus, 1);
      case '=': return single(Tok::equals, 1);
      case '/': return single(Tok::slash, 1);
      default: break;
    }
    throw ParseError(t.line, t.column, std::string("unexpected character '") + c + "'");
  }

 private:
  bool starts_with(std::string_view s) const { return src_.substr(pos_, s.size()) == s; }

  void advance() {
    if (src_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  void skip_space_and_comments() {
    while (pos_ < src_.size()) {
      char c = src_[pos_];
      if (c == '#') {
        while (pos_ < src_.size() && src_[pos_] != '\n') advance();
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        advance();
      } else {
        break;
      }
    }
  }

  Token lex_number(Token t) {
    std::size_t start = pos_;
    if (src_[pos_] == '-') advance();
    auto digits = [&] {
      while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) advance();
    };
    digits();
    // A '.' is part of the number only when a digit follows; otherwise it is
    // the statement terminator.
    if (pos_ + 1 < src_.size() && src_[pos_] == '.' && std::isdigit(static_cast<unsigned char>(src_[pos_ + 1]))) {
      advance();
      digits();
    }
    if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
      std::size_t save_pos = pos_, save_col = col_;
      advance();
      if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) advance();
      if (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
        digits();
      } else {
        pos_ = save_pos;
        col_ = save_col;
      }
    }
    std::string_view text = src_.substr(start, pos_ - start);
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
      throw ParseError(t.line, t.column, "malformed number '" + std::string(text) + "'");
    }
    t.kind = Tok::number;
    t.text = std::string(text);
    t.number = value;
    return t;
  }

  Token lex_string(Token t) {
    advance();  // opening quote
    std::string out;
    while (true) {
      if (pos_ >= src_.size() || src_[pos_] == '\n') {
        throw ParseError(t.line, t.column, "unterminated string");
      }
      char c = src_[pos_];
      if (c == '"') {
        advance();
        break;
      }
      if (c == '\\') {
        advance();
        if (pos_ >= src_.size()) throw ParseError(t.line, t.column, "unterminated string");
        char e = src_[pos_];
        if (e != '"' && e != '\\') {
          throw ParseError(line_, col_, std::string("unknown escape '\\") + e + "'");
        }
        out.push_back(e);
        advance();
        continue;
      }
      out.push_back(c);
      advance();
    }
    t.kind = Tok::string;
    t.text = std::move(out);
    return t;
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
  std::size_t col_ = 1;
};

const char* describe(Tok k) {
  switch (k) {
    case Tok::identifier: return "identifier";
    case Tok::number: return "number";
    case Tok::string: return "string";
    case Tok::double_colon: return "'::'";
    case Tok::colon: return "':'";
    case Tok::arrow: return "'->'";
    case Tok::double_arrow: return "'<->'";
    case Tok::amp: return "'&'";
    case Tok::lparen: return "'('";
    case Tok::rparen: return "')'";
    case Tok::comma: return "','";
    case Tok::dot: return "'.'";
    case Tok::plus: return "'+'";
    case Tok::equals: return "'='";
    case Tok::slash: return "'/'";
    case Tok::end: return "end of input";
  }
  return "token";
}

bool is_variable_name(const std::string& s) {
  return !s.empty() && (std::isupper(static_cast<unsigned char>(s[0])) || s[0] == '_');
}

class Parser {
 public:
  Parser(std::string_view src, bool strict) : lex_(src), strict_(strict) { shift(); }

  Theory parse() {
    while (cur_.kind != Tok::end) statement();
    return std::move(theory_);
  }

 private:
  void shift() { cur_ = lex_.next(); }

  [[noreturn]] void fail(const Token& at, const std::string& msg) const { throw ParseError(at.line, at.column, msg); }

  Token expect(Tok kind) {
    if (cur_.kind != kind) {
      fail(cur_, std::string("expected ") + describe(kind) + ", found " +
                     (cur_.kind == Tok::end ? std::string(describe(Tok::end)) : "'" + cur_.text + "'"));
    }
    Token t = cur_;
    shift();
    return t;
  }

  bool at_keyword(std::string_view kw) const { return cur_.kind == Tok::identifier && cur_.text == kw; }

  void statement() {
    if (at_keyword("constraint") || at_keyword("predicate")) {
      Token kw = cur_;
      shift();
      if (cur_.kind == Tok::colon) {
        shift();
        if (kw.text == "constraint") {
          constraint(kw);
        } else {
          declaration(kw);
        }
        return;
      }
      fail(cur_, "expected ':' after '" + kw.text + "'");
    }
    rule();
  }

  void note_predicate(const Token& at, const std::string& name, std::size_t arity) {
    auto it = theory_.predicates.find(name);
    if (it == theory_.predicates.end()) {
      theory_.predicates.emplace(name, PredicateInfo{arity, false});
      return;
    }
    if (strict_ && it->second.arity != arity) {
      fail(at, "predicate '" + name + "' used with arity " + std::to_string(arity) + " but declared with arity " +
                   std::to_string(it->second.arity));
    }
  }

  Term term() {
    if (cur_.kind == Tok::string) {
      Term t = Term::constant(cur_.text);
      shift();
      return t;
    }
    if (cur_.kind == Tok::identifier) {
      Term t = is_variable_name(cur_.text) ? Term::variable(cur_.text) : Term::constant(cur_.text);
      shift();
      return t;
    }
    fail(cur_, "expected a variable or constant, found " + std::string(describe(cur_.kind)));
  }

  Atom atom() {
    Token name = expect(Tok::identifier);
    Atom a;
    a.predicate = name.text;
    if (cur_.kind == Tok::lparen) {
      shift();
      if (cur_.kind != Tok::rparen) {
        a.args.push_back(term());
        while (cur_.kind == Tok::comma) {
          shift();
          a.args.push_back(term());
        }
      }
      expect(Tok::rparen);
    }
    note_predicate(name, a.predicate, a.args.size());
    return a;
  }

  void check_safety(const Token& at, const Rule& r) {
    if (!strict_) return;
    std::set<std::string> bound;
    for (const auto& p : r.premise) {
      for (const auto& t : p.args) {
        if (t.is_variable()) bound.insert(t.name);
      }
    }
    for (const auto& t : r.conclusion.args) {
      if (t.is_variable() && !bound.count(t.name)) {
        fail(at, "unsafe rule: variable " + t.name + " of the conclusion does not occur in the premise");
      }
    }
  }

  void rule() {
    Token start = cur_;
    Rule r;
    if (cur_.kind == Tok::number) {
      r.weight = cur_.number;
      if (strict_ && !(r.weight >= 0.0 && std::isfinite(r.weight))) {
        fail(cur_, "rule weights must be finite and nonnegative");
      }
      shift();
    } else if (at_keyword("LEARN")) {
      r.learnable = true;
      r.weight = default_learnable_weight;
      shift();
      if (cur_.kind == Tok::lparen) {
        shift();
        Token w = expect(Tok::number);
        if (strict_ && !(w.number >= 0.0 && std::isfinite(w.number))) {
          fail(w, "rule weights must be finite and nonnegative");
        }
        r.weight = w.number;
        expect(Tok::rparen);
      }
    } else if (at_keyword("HARD")) {
      r.hard = true;
      r.weight = 0.0;
      shift();
    } else {
      fail(cur_, "expected a statement (weight '::' rule, 'constraint:' or 'predicate:')");
    }
    expect(Tok::double_colon);

    std::vector<Atom> lhs;
    lhs.push_back(atom());
    while (cur_.kind == Tok::amp) {
      shift();
      lhs.push_back(atom());
    }
    const std::size_t index = theory_.rules.size();
    r.weight_group = index;
    if (cur_.kind == Tok::dot) {
      if (lhs.size() != 1) fail(cur_, "a conjunction needs '->' and a conclusion");
      r.conclusion = std::move(lhs.front());
      shift();
      check_safety(start, r);
      theory_.rules.push_back(std::move(r));
      return;
    }
    if (cur_.kind == Tok::double_arrow) {
      Token arrow = cur_;
      shift();
      if (lhs.size() != 1) fail(arrow, "'<->' takes a single atom on each side");
      Atom rhs = atom();
      expect(Tok::dot);
      Rule forward = r;
      forward.premise = {lhs.front()};
      forward.conclusion = rhs;
      Rule backward = r;
      backward.premise = {rhs};
      backward.conclusion = lhs.front();
      check_safety(start, forward);
      check_safety(start, backward);
      theory_.rules.push_back(std::move(forward));
      theory_.rules.push_back(std::move(backward));
      return;
    }
    expect(Tok::arrow);
    r.premise = std::move(lhs);
    r.conclusion = atom();
    expect(Tok::dot);
    check_safety(start, r);
    theory_.rules.push_back(std::move(r));
  }

  void constraint(const Token& kw) {
    Token name = expect(Tok::identifier);
    SumConstraint c;
    c.predicate = name.text;
    expect(Tok::lparen);
    std::optional<std::size_t> summed;
    while (true) {
      if (cur_.kind == Tok::plus) {
        Token plus = cur_;
        shift();
        if (summed) fail(plus, "a constraint sums over exactly one argument");
        summed = c.args.size();
        if (cur_.kind != Tok::identifier || !is_variable_name(cur_.text)) {
          fail(cur_, "'+' must be followed by a variable");
        }
      }
      c.args.push_back(term());
      if (cur_.kind == Tok::comma) {
        shift();
        continue;
      }
      break;
    }
    expect(Tok::rparen);
    if (!summed) fail(kw, "constraint needs one summed argument marked with '+'");
    c.summed_position = *summed;
    if (cur_.kind == Tok::equals) {
      shift();
      Token t = expect(Tok::number);
      if (!(t.number > 0.0)) fail(t, "constraint target must be positive");
      c.target = t.number;
    }
    expect(Tok::dot);
    note_predicate(name, c.predicate, c.args.size());
    theory_.constraints.push_back(std::move(c));
  }

  void declaration(const Token&) {
    Token name = expect(Tok::identifier);
    expect(Tok::slash);
    Token arity = expect(Tok::number);
    if (!(arity.number >= 0 && arity.number == std::floor(arity.number))) fail(arity, "arity must be a natural number");
    bool closed = false;
    if (at_keyword("closed")) {
      closed = true;
      shift();
    } else if (at_keyword("open")) {
      shift();
    }
    expect(Tok::dot);
    const auto n = static_cast<std::size_t>(arity.number);
    auto it = theory_.predicates.find(name.text);
    if (it != theory_.predicates.end() && it->second.arity != n) {
      if (strict_) {
        fail(name, "predicate '" + name.text + "' redeclared with arity " + std::to_string(n));
      }
      return;
    }
    theory_.predicates[name.text] = PredicateInfo{n, closed};
  }

  Lexer lex_;
  bool strict_;
  Token cur_;
  Theory theory_;
};

}  // namespace

Theory parse_theory(std::string_view source) { return Parser(source, true).parse(); }

Theory parse_theory_unchecked(std::string_view source) { return Parser(source, false).parse(); }

Theory load_theory(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open rule file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_theory(ss.str());
  } catch (const ParseError& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

}  // namespace concordia::logic

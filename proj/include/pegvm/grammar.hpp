// pegvm - PEG bytecode compiler and parsing virtual machine
#pragma once

#include <algorithm>
#include <bitset>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace pegvm {

using ByteSet = std::bitset<256>;

enum class ExprKind {
    Empty,
    Char,
    CharClass,
    Any,
    Nonterminal,
    Literal,
    Sequence,
    Choice,
    Option,
    ZeroOrMore,
    OneOrMore,
    And,
    Not,
};

// Parsing expression tree. Immutable by convention once built; plain value
// semantics so subtrees can be copied freely (inlining relies on this).
struct Expression {
    ExprKind kind = ExprKind::Empty;
    std::uint8_t ch = 0;                // Char
    ByteSet klass;                      // CharClass
    std::string name;                   // Nonterminal
    std::string bytes;                  // Literal (non-empty)
    std::vector<Expression> children;   // Sequence/Choice (>=2) or unary (1)

    static Expression empty() { return Expression{}; }
    static Expression chr(std::uint8_t c) {
        Expression e; e.kind = ExprKind::Char; e.ch = c; return e;
    }
    static Expression char_class(ByteSet set) {
        Expression e; e.kind = ExprKind::CharClass; e.klass = set; return e;
    }
    static Expression any() {
        Expression e; e.kind = ExprKind::Any; return e;
    }
    static Expression nonterminal(std::string n) {
        Expression e; e.kind = ExprKind::Nonterminal; e.name = std::move(n); return e;
    }
    static Expression literal(std::string s) {
        if (s.empty()) return empty();
        if (s.size() == 1) return chr(static_cast<std::uint8_t>(s[0]));
        Expression e; e.kind = ExprKind::Literal; e.bytes = std::move(s); return e;
    }
    static Expression sequence(std::vector<Expression> es) {
        if (es.size() == 1) return std::move(es.front());
        Expression e; e.kind = ExprKind::Sequence; e.children = std::move(es); return e;
    }
    static Expression choice(std::vector<Expression> es) {
        if (es.size() == 1) return std::move(es.front());
        Expression e; e.kind = ExprKind::Choice; e.children = std::move(es); return e;
    }
    static Expression option(Expression c) {
        Expression e; e.kind = ExprKind::Option; e.children.push_back(std::move(c)); return e;
    }
    static Expression zero_or_more(Expression c) {
        Expression e; e.kind = ExprKind::ZeroOrMore; e.children.push_back(std::move(c)); return e;
    }
    static Expression one_or_more(Expression c) {
        Expression e; e.kind = ExprKind::OneOrMore; e.children.push_back(std::move(c)); return e;
    }
    static Expression and_pred(Expression c) {
        Expression e; e.kind = ExprKind::And; e.children.push_back(std::move(c)); return e;
    }
    static Expression not_pred(Expression c) {
        Expression e; e.kind = ExprKind::Not; e.children.push_back(std::move(c)); return e;
    }

    const Expression& child() const { return children.front(); }
};

struct Production {
    std::string name;
    Expression body;
};

// Named productions in source order; `start` defaults to the first one.
struct Grammar {
    std::vector<Production> productions;
    std::string start;

    const Production* find(std::string_view name) const {
        for (const auto& p : productions)
            if (p.name == name) return &p;
        return nullptr;
    }
    const Production& start_production() const { return *find(start); }
};

class parse_error : public std::runtime_error {
public:
    parse_error(std::size_t line, std::size_t column, const std::string& what_arg)
        : std::runtime_error("line " + std::to_string(line) + ":" + std::to_string(column) +
                             ": " + what_arg),
          line_(line), column_(column) {}
    std::size_t line() const noexcept { return line_; }
    std::size_t column() const noexcept { return column_; }

private:
    std::size_t line_;
    std::size_t column_;
};

namespace detail {

// Recursive-descent reader for the .peg surface syntax.
class GrammarReader {
public:
    explicit GrammarReader(std::string_view text) : text_(text) {}

    Grammar read() {
        Grammar g;
        skip_space();
        while (!at_end()) {
            std::size_t line = line_, col = column();
            std::string name = read_identifier();
            skip_space();
            expect('=');
            skip_space();
            Expression body = read_choice();
            if (g.find(name))
                throw parse_error(line, col, "duplicate production name '" + name + "'");
            g.productions.push_back({std::move(name), std::move(body)});
            skip_space();
        }
        if (g.productions.empty())
            throw parse_error(line_, column(), "grammar has no productions");
        g.start = g.productions.front().name;
        return g;
    }

private:
    std::string_view text_;
    std::size_t pos_ = 0;
    std::size_t line_ = 1;
    std::size_t line_start_ = 0;
    int paren_depth_ = 0;

    std::size_t column() const { return pos_ - line_start_ + 1; }
    bool at_end() const { return pos_ >= text_.size(); }
    char peek() const { return text_[pos_]; }
    bool peek_is(char c) const { return !at_end() && text_[pos_] == c; }

    [[noreturn]] void fail(const std::string& msg) const {
        throw parse_error(line_, column(), msg);
    }

    char take() {
        char c = text_[pos_++];
        if (c == '\n') { ++line_; line_start_ = pos_; }
        return c;
    }

    void expect(char c) {
        if (at_end() || peek() != c)
            fail(std::string("expected '") + c + "'");
        take();
    }

    void skip_space() {
        while (!at_end()) {
            char c = peek();
            if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
                take();
            } else if (c == '#') {
                while (!at_end() && peek() != '\n') take();
            } else {
                break;
            }
        }
    }

    static bool is_ident_start(char c) {
        return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || c == '_';
    }
    static bool is_ident_char(char c) {
        return is_ident_start(c) || (c >= '0' && c <= '9');
    }

    std::string read_identifier() {
        if (at_end() || !is_ident_start(peek()))
            fail("expected production name");
        std::string s;
        while (!at_end() && is_ident_char(peek())) s.push_back(take());
        return s;
    }

    // True when the upcoming tokens begin the next production (IDENT '=').
    // Never inside a group: expressions may span lines there.
    bool at_production_boundary() {
        if (paren_depth_ > 0) return false;
        if (at_end() || !is_ident_start(peek())) return false;
        std::size_t p = pos_;
        while (p < text_.size() && is_ident_char(text_[p])) ++p;
        while (p < text_.size() && (text_[p] == ' ' || text_[p] == '\t')) ++p;
        return p < text_.size() && text_[p] == '=';
    }

    Expression read_choice() {
        std::vector<Expression> alts;
        alts.push_back(read_sequence());
        skip_space();
        while (peek_is('/')) {
            take();
            skip_space();
            alts.push_back(read_sequence());
            skip_space();
        }
        return Expression::choice(std::move(alts));
    }

    Expression read_sequence() {
        std::vector<Expression> items;
        items.push_back(read_prefixed());
        for (;;) {
            skip_space();
            if (at_end() || peek() == '/' || peek() == ')') break;
            if (at_production_boundary()) break;
            items.push_back(read_prefixed());
        }
        return Expression::sequence(std::move(items));
    }

    Expression read_prefixed() {
        if (peek_is('!')) {
            take();
            skip_space();
            return Expression::not_pred(read_prefixed());
        }
        if (peek_is('&')) {
            take();
            skip_space();
            return Expression::and_pred(read_prefixed());
        }
        return read_suffixed();
    }

    Expression read_suffixed() {
        Expression e = read_primary();
        for (;;) {
            if (peek_is('?')) {
                take();
                e = Expression::option(std::move(e));
            } else if (peek_is('*')) {
                take();
                e = Expression::zero_or_more(std::move(e));
            } else if (peek_is('+')) {
                // e+ desugars to e e*; the compiler emits loop code for e*.
                take();
                Expression rep = Expression::zero_or_more(e);
                std::vector<Expression> seq;
                seq.push_back(std::move(e));
                seq.push_back(std::move(rep));
                e = Expression::sequence(std::move(seq));
            } else {
                break;
            }
        }
        return e;
    }

    Expression read_primary() {
        if (at_end()) fail("unexpected end of grammar");
        char c = peek();
        if (c == '(') {
            take();
            ++paren_depth_;
            skip_space();
            Expression e = read_choice();
            skip_space();
            expect(')');
            --paren_depth_;
            return e;
        }
        if (c == '\'') return read_literal();
        if (c == '[') return read_class();
        if (c == '.') {
            take();
            return Expression::any();
        }
        if (is_ident_start(c)) {
            return Expression::nonterminal(read_identifier());
        }
        fail("expected expression");
    }

    std::uint8_t read_escape() {
        if (at_end()) fail("unterminated escape");
        char c = take();
        switch (c) {
        case 'n': return '\n';
        case 'r': return '\r';
        case 't': return '\t';
        case '0': return '\0';
        case '\\': return '\\';
        case '\'': return '\'';
        case '"': return '"';
        case ']': return ']';
        case '[': return '[';
        case '-': return '-';
        case 'x': {
            int v = 0;
            for (int i = 0; i < 2; ++i) {
                if (at_end()) fail("truncated \\x escape");
                char h = take();
                int d;
                if (h >= '0' && h <= '9') d = h - '0';
                else if (h >= 'a' && h <= 'f') d = h - 'a' + 10;
                else if (h >= 'A' && h <= 'F') d = h - 'A' + 10;
                else { fail("bad hex digit in \\x escape"); }
                v = v * 16 + d;
            }
            return static_cast<std::uint8_t>(v);
        }
        default:
            fail(std::string("unknown escape '\\") + c + "'");
        }
    }

    Expression read_literal() {
        expect('\'');
        std::string s;
        for (;;) {
            if (at_end()) fail("unterminated literal");
            char c = take();
            if (c == '\'') break;
            if (c == '\\') s.push_back(static_cast<char>(read_escape()));
            else s.push_back(c);
        }
        if (s.empty()) return Expression::empty();
        if (s.size() == 1) return Expression::chr(static_cast<std::uint8_t>(s[0]));
        return Expression::literal(std::move(s));
    }

    Expression read_class() {
        expect('[');
        ByteSet set;
        bool first = true;
        for (;;) {
            if (at_end()) fail("unterminated character class");
            if (peek() == ']' && !first) {
                take();
                break;
            }
            std::uint8_t lo;
            char c = take();
            if (c == '\\') lo = read_escape();
            else lo = static_cast<std::uint8_t>(c);
            first = false;
            // 'x-y' range unless the '-' closes the class.
            if (peek_is('-') && pos_ + 1 < text_.size() && text_[pos_ + 1] != ']') {
                take();
                std::uint8_t hi;
                char d = take();
                if (d == '\\') hi = read_escape();
                else hi = static_cast<std::uint8_t>(d);
                if (hi < lo) fail("character class range out of order");
                for (unsigned v = lo; v <= hi; ++v) set.set(v);
            } else {
                set.set(lo);
            }
        }
        if (set.none()) fail("empty character class");
        if (set.count() == 1) {
            for (unsigned v = 0; v < 256; ++v)
                if (set.test(v)) return Expression::chr(static_cast<std::uint8_t>(v));
        }
        return Expression::char_class(set);
    }
};

} // namespace detail

// Parses .peg source text. Throws parse_error with line/column on bad syntax
// or a duplicate production name.
inline Grammar parse_grammar(std::string_view text) {
    return detail::GrammarReader(text).read();
}

enum class DiagnosticKind {
    Unresolved,
    LeftRecursion,
    NullableRepetition,
};

struct Diagnostic {
    DiagnosticKind kind;
    std::string production;          // production the issue was found in
    std::vector<std::string> cycle;  // LeftRecursion: the offending call path
    std::string detail;
};

namespace detail {

class GrammarAnalysis {
public:
    explicit GrammarAnalysis(const Grammar& g) : g_(g) {
        compute_nullable();
    }

    std::vector<Diagnostic> run() {
        std::vector<Diagnostic> out;
        check_unresolved(out);
        if (!out.empty()) return out;  // reachability needs resolved names
        check_left_recursion(out);
        check_nullable_repetition(out);
        return out;
    }

    bool nullable(const Expression& e) const { return nullable_expr(e); }

private:
    const Grammar& g_;
    std::vector<bool> null_;  // per production, least fixpoint

    std::size_t index_of(std::string_view name) const {
        for (std::size_t i = 0; i < g_.productions.size(); ++i)
            if (g_.productions[i].name == name) return i;
        return g_.productions.size();
    }

    bool nullable_expr(const Expression& e) const {
        switch (e.kind) {
        case ExprKind::Empty: return true;
        case ExprKind::Char:
        case ExprKind::CharClass:
        case ExprKind::Any:
        case ExprKind::Literal: return false;
        case ExprKind::Nonterminal: {
            std::size_t i = index_of(e.name);
            return i < null_.size() ? null_[i] : false;
        }
        case ExprKind::Sequence: {
            for (const auto& c : e.children)
                if (!nullable_expr(c)) return false;
            return true;
        }
        case ExprKind::Choice: {
            for (const auto& c : e.children)
                if (nullable_expr(c)) return true;
            return false;
        }
        case ExprKind::Option:
        case ExprKind::ZeroOrMore: return true;
        case ExprKind::OneOrMore: return nullable_expr(e.child());
        case ExprKind::And:
        case ExprKind::Not: return true;
        }
        return false;
    }

    void compute_nullable() {
        null_.assign(g_.productions.size(), false);
        bool changed = true;
        while (changed) {
            changed = false;
            for (std::size_t i = 0; i < g_.productions.size(); ++i) {
                if (!null_[i] && nullable_expr(g_.productions[i].body)) {
                    null_[i] = true;
                    changed = true;
                }
            }
        }
    }

    void collect_refs(const Expression& e, std::vector<std::string>& out) const {
        if (e.kind == ExprKind::Nonterminal) out.push_back(e.name);
        for (const auto& c : e.children) collect_refs(c, out);
    }

    void check_unresolved(std::vector<Diagnostic>& out) const {
        for (const auto& p : g_.productions) {
            std::vector<std::string> refs;
            collect_refs(p.body, refs);
            for (const auto& r : refs) {
                if (!g_.find(r)) {
                    bool dup = false;
                    for (const auto& d : out)
                        if (d.kind == DiagnosticKind::Unresolved && d.detail == r) dup = true;
                    if (!dup)
                        out.push_back({DiagnosticKind::Unresolved, p.name, {}, r});
                }
            }
        }
    }

    // Nonterminals an expression may invoke before any input is consumed.
    void prefix_refs(const Expression& e, std::vector<std::string>& out) const {
        switch (e.kind) {
        case ExprKind::Nonterminal:
            out.push_back(e.name);
            return;
        case ExprKind::Sequence:
            for (const auto& c : e.children) {
                prefix_refs(c, out);
                if (!nullable_expr(c)) return;
            }
            return;
        case ExprKind::Choice:
            for (const auto& c : e.children) prefix_refs(c, out);
            return;
        case ExprKind::Option:
        case ExprKind::ZeroOrMore:
        case ExprKind::OneOrMore:
        case ExprKind::And:
        case ExprKind::Not:
            prefix_refs(e.child(), out);
            return;
        default:
            return;
        }
    }

    void check_left_recursion(std::vector<Diagnostic>& out) const {
        std::size_t n = g_.productions.size();
        std::vector<std::vector<std::size_t>> edges(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<std::string> refs;
            prefix_refs(g_.productions[i].body, refs);
            for (const auto& r : refs) edges[i].push_back(index_of(r));
        }
        // DFS cycle detection; report one cycle per entry production.
        std::vector<int> state(n, 0);  // 0 unseen, 1 on stack, 2 done
        std::vector<std::size_t> path;
        for (std::size_t i = 0; i < n; ++i) {
            if (state[i] == 0 && find_cycle(i, edges, state, path, out)) {
                path.clear();
                // continue so independent cycles are all reported
            }
        }
    }

    bool find_cycle(std::size_t v, const std::vector<std::vector<std::size_t>>& edges,
                    std::vector<int>& state, std::vector<std::size_t>& path,
                    std::vector<Diagnostic>& out) const {
        state[v] = 1;
        path.push_back(v);
        for (std::size_t w : edges[v]) {
            if (state[w] == 1) {
                Diagnostic d{DiagnosticKind::LeftRecursion, g_.productions[w].name, {}, {}};
                auto it = std::find(path.begin(), path.end(), w);
                for (; it != path.end(); ++it) d.cycle.push_back(g_.productions[*it].name);
                d.cycle.push_back(g_.productions[w].name);
                out.push_back(std::move(d));
                state[v] = 2;
                path.pop_back();
                return true;
            }
            if (state[w] == 0 && find_cycle(w, edges, state, path, out)) {
                state[v] = 2;
                path.pop_back();
                return true;
            }
        }
        state[v] = 2;
        path.pop_back();
        return false;
    }

    void scan_repetitions(const Expression& e, const std::string& prod, int& position,
                          std::vector<Diagnostic>& out) const {
        if (e.kind == ExprKind::ZeroOrMore || e.kind == ExprKind::OneOrMore) {
            ++position;
            if (nullable_expr(e.child())) {
                Diagnostic d{DiagnosticKind::NullableRepetition, prod, {}, {}};
                d.detail = "repetition #" + std::to_string(position) + " body can match empty";
                out.push_back(std::move(d));
            }
        }
        for (const auto& c : e.children) scan_repetitions(c, prod, position, out);
    }

    void check_nullable_repetition(std::vector<Diagnostic>& out) const {
        for (const auto& p : g_.productions) {
            int position = 0;
            scan_repetitions(p.body, p.name, position, out);
        }
    }
};

} // namespace detail

// Well-formedness checks beyond syntax. An empty result means the grammar is
// compilable: all names resolve, no left recursion (detected through nullable
// prefixes), and no repetition whose body can succeed on empty input.
inline std::vector<Diagnostic> validate_grammar(const Grammar& g) {
    return detail::GrammarAnalysis(g).run();
}

inline std::string diagnostic_to_string(const Diagnostic& d) {
    switch (d.kind) {
    case DiagnosticKind::Unresolved:
        return "UNRESOLVED(" + d.detail + ") in " + d.production;
    case DiagnosticKind::LeftRecursion: {
        std::string s = "LEFT_RECURSION(";
        for (std::size_t i = 0; i < d.cycle.size(); ++i) {
            if (i) s += "->";
            s += d.cycle[i];
        }
        return s + ")";
    }
    case DiagnosticKind::NullableRepetition:
        return "NULLABLE_REPETITION(" + d.production + ", " + d.detail + ")";
    }
    return "?";
}

namespace detail {

inline void append_escaped(std::string& out, std::uint8_t c, std::string_view specials) {
    switch (c) {
    case '\n': out += "\\n"; return;
    case '\r': out += "\\r"; return;
    case '\t': out += "\\t"; return;
    case '\\': out += "\\\\"; return;
    default: break;
    }
    if (specials.find(static_cast<char>(c)) != std::string_view::npos) {
        out += '\\';
        out += static_cast<char>(c);
        return;
    }
    if (c >= 0x20 && c < 0x7f) {
        out += static_cast<char>(c);
        return;
    }
    static const char* hex = "0123456789abcdef";
    out += "\\x";
    out += hex[c >> 4];
    out += hex[c & 0xf];
}

inline std::string class_to_string(const ByteSet& set) {
    std::string out = "[";
    unsigned v = 0;
    while (v < 256) {
        if (!set.test(v)) { ++v; continue; }
        unsigned lo = v;
        while (v + 1 < 256 && set.test(v + 1)) ++v;
        unsigned hi = v;
        append_escaped(out, static_cast<std::uint8_t>(lo), "]-");
        if (hi > lo + 1) out += '-';
        if (hi > lo) append_escaped(out, static_cast<std::uint8_t>(hi), "]-");
        ++v;
    }
    out += ']';
    return out;
}

inline int precedence_of(const Expression& e) {
    switch (e.kind) {
    case ExprKind::Choice: return 1;
    case ExprKind::Sequence: return 2;
    case ExprKind::And:
    case ExprKind::Not: return 3;
    case ExprKind::Option:
    case ExprKind::ZeroOrMore:
    case ExprKind::OneOrMore: return 4;
    default: return 5;
    }
}

inline void print_expr(std::string& out, const Expression& e, int min_prec) {
    int prec = precedence_of(e);
    if (prec < min_prec) out += '(';
    switch (e.kind) {
    case ExprKind::Empty:
        out += "''";
        break;
    case ExprKind::Char:
        out += '\'';
        append_escaped(out, e.ch, "'");
        out += '\'';
        break;
    case ExprKind::CharClass:
        out += class_to_string(e.klass);
        break;
    case ExprKind::Any:
        out += '.';
        break;
    case ExprKind::Nonterminal:
        out += e.name;
        break;
    case ExprKind::Literal:
        out += '\'';
        for (char c : e.bytes) append_escaped(out, static_cast<std::uint8_t>(c), "'");
        out += '\'';
        break;
    case ExprKind::Sequence:
        for (std::size_t i = 0; i < e.children.size(); ++i) {
            if (i) out += ' ';
            print_expr(out, e.children[i], 3);
        }
        break;
    case ExprKind::Choice:
        for (std::size_t i = 0; i < e.children.size(); ++i) {
            if (i) out += " / ";
            print_expr(out, e.children[i], 2);
        }
        break;
    case ExprKind::Option:
        print_expr(out, e.child(), 5);
        out += '?';
        break;
    case ExprKind::ZeroOrMore:
        print_expr(out, e.child(), 5);
        out += '*';
        break;
    case ExprKind::OneOrMore:
        print_expr(out, e.child(), 5);
        out += '+';
        break;
    case ExprKind::And:
        out += '&';
        print_expr(out, e.child(), 4);
        break;
    case ExprKind::Not:
        out += '!';
        print_expr(out, e.child(), 4);
        break;
    }
    if (prec < min_prec) out += ')';
}

} // namespace detail

// Canonical serializer; parse_grammar(pretty_print(g)) reproduces g exactly.
inline std::string pretty_print(const Expression& e) {
    std::string out;
    detail::print_expr(out, e, 0);
    return out;
}

inline std::string pretty_print(const Grammar& g) {
    std::string out;
    for (const auto& p : g.productions) {
        out += p.name;
        out += " = ";
        out += pretty_print(p.body);
        out += '\n';
    }
    return out;
}

inline bool operator==(const Expression& a, const Expression& b) {
    if (a.kind != b.kind) return false;
    switch (a.kind) {
    case ExprKind::Char: return a.ch == b.ch;
    case ExprKind::CharClass: return a.klass == b.klass;
    case ExprKind::Nonterminal: return a.name == b.name;
    case ExprKind::Literal: return a.bytes == b.bytes;
    default: return a.children == b.children;
    }
}

} // namespace pegvm

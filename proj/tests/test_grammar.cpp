#include <catch2/catch_amalgamated.hpp>

#include "pegvm/grammar.hpp"
#include "pegvm/interpret.hpp"
#include "test_support.hpp"

using namespace pegvm;

namespace {

const char* kCsvSource =
    "File = CSV*\n"
    "CSV = Value ( ',' Value )* '\\n'\n"
    "Value = (![,\\n] .)*\n";

// The syslog figure as printed: Misc is referenced but never defined, so it
// parses but does not validate. The bundled corpus file adds Misc.
const char* kSyslogFragment =
    "File = Log*\n"
    "Log = MONTH ' ' DAY ' ' TIME ' ' HOST ' ' PROCESS '[' PID ']' Misc ': ' DATA\n"
    "DAY = [0-3 ][0-9]\n"
    "MONTH = 'Jan'/'Feb'/'Mar'/'Apr'/'May'/'Jun'/'Jul'/'Aug'/'Sep'/'Oct'/'Nov'/'Dec'\n"
    "TIME = [0-9][0-9] ':' [0-9][0-9] ':' [0-9][0-9]\n"
    "HOST = (!' ' .)*\n"
    "PROCESS = (!'[' .)*\n"
    "PID = [0-9]+\n"
    "DATA = (!('\\n' (MONTH / !.)) .)*\n";

// Rewrites P-prefixed nonterminal names so two generated grammars can be
// merged into one without collisions.
Expression rename(const Expression& e, const std::string& prefix) {
    Expression out = e;
    if (out.kind == ExprKind::Nonterminal && !out.name.empty() && out.name[0] == 'P')
        out.name = prefix + out.name.substr(1);
    for (auto& c : out.children) c = rename(c, prefix);
    return out;
}

} // namespace

TEST_CASE("csv grammar parses into the expected structure") {
    Grammar g = parse_grammar(kCsvSource);
    REQUIRE(g.productions.size() == 3);
    CHECK(g.start == "File");
    CHECK(g.productions[0].name == "File");
    CHECK(g.productions[1].name == "CSV");
    CHECK(g.productions[2].name == "Value");

    // Value = ZeroOrMore(Sequence(Not(CharClass{',','\n'}), Any))
    const Expression& value = g.productions[2].body;
    REQUIRE(value.kind == ExprKind::ZeroOrMore);
    const Expression& body = value.child();
    REQUIRE(body.kind == ExprKind::Sequence);
    REQUIRE(body.children.size() == 2);
    REQUIRE(body.children[0].kind == ExprKind::Not);
    const Expression& klass = body.children[0].child();
    REQUIRE(klass.kind == ExprKind::CharClass);
    CHECK(klass.klass.count() == 2);
    CHECK(klass.klass.test(','));
    CHECK(klass.klass.test('\n'));
    CHECK(body.children[1].kind == ExprKind::Any);
}

TEST_CASE("empty literal yields the empty expression") {
    Grammar g = parse_grammar("A = ''");
    REQUIRE(g.productions.size() == 1);
    CHECK(g.productions[0].body.kind == ExprKind::Empty);
}

TEST_CASE("syslog figure parses with month as a 12-way choice of literals") {
    Grammar g = parse_grammar(kSyslogFragment);
    CHECK(g.productions.size() == 9);
    const Production* month = g.find("MONTH");
    REQUIRE(month != nullptr);
    REQUIRE(month->body.kind == ExprKind::Choice);
    REQUIRE(month->body.children.size() == 12);
    for (const auto& alt : month->body.children) {
        REQUIRE(alt.kind == ExprKind::Literal);
        CHECK(alt.bytes.size() == 3);
    }
    // the fragment leaves Misc dangling
    auto diags = validate_grammar(g);
    REQUIRE(diags.size() == 1);
    CHECK(diags[0].kind == DiagnosticKind::Unresolved);
    CHECK(diags[0].detail == "Misc");
}

TEST_CASE("operator precedence: prefix binds tighter than sequence, choice loosest") {
    Grammar g = parse_grammar("A = !'a' 'b' / 'c'");
    const Expression& e = g.productions[0].body;
    REQUIRE(e.kind == ExprKind::Choice);
    REQUIRE(e.children.size() == 2);
    REQUIRE(e.children[0].kind == ExprKind::Sequence);
    CHECK(e.children[0].children[0].kind == ExprKind::Not);
    CHECK(e.children[0].children[1].kind == ExprKind::Char);
    CHECK(e.children[1].kind == ExprKind::Char);

    // suffix binds tighter than prefix: !e* is !(e*)
    Grammar g2 = parse_grammar("A = !'a'* 'b'");
    const Expression& f = g2.productions[0].body;
    REQUIRE(f.kind == ExprKind::Sequence);
    REQUIRE(f.children[0].kind == ExprKind::Not);
    CHECK(f.children[0].child().kind == ExprKind::ZeroOrMore);
}

TEST_CASE("one-or-more desugars to a sequence with a repetition") {
    Grammar g = parse_grammar("A = [0-9]+");
    const Expression& e = g.productions[0].body;
    REQUIRE(e.kind == ExprKind::Sequence);
    REQUIRE(e.children.size() == 2);
    CHECK(e.children[0].kind == ExprKind::CharClass);
    CHECK(e.children[1].kind == ExprKind::ZeroOrMore);
}

TEST_CASE("class ranges and escapes") {
    Grammar g = parse_grammar("A = [A-Za-z0-9\\-\\]\\t]");
    const Expression& e = g.productions[0].body;
    REQUIRE(e.kind == ExprKind::CharClass);
    CHECK(e.klass.count() == 26 + 26 + 10 + 3);
    CHECK(e.klass.test('-'));
    CHECK(e.klass.test(']'));
    CHECK(e.klass.test('\t'));
    CHECK_FALSE(e.klass.test('\\'));

    Grammar hex = parse_grammar("A = [\\x80-\\x83]");
    CHECK(hex.productions[0].body.klass.count() == 4);
    CHECK(hex.productions[0].body.klass.test(0x80));
    CHECK(hex.productions[0].body.klass.test(0x83));
}

TEST_CASE("single-member class normalizes to a char") {
    Grammar g = parse_grammar("A = [x]");
    CHECK(g.productions[0].body.kind == ExprKind::Char);
    CHECK(g.productions[0].body.ch == 'x');
}

TEST_CASE("comments and multi-line productions") {
    Grammar g = parse_grammar(
        "# leading comment\n"
        "A = 'a'   # trailing comment\n"
        "    'b' / 'c'\n"
        "B = A\n");
    REQUIRE(g.productions.size() == 2);
    REQUIRE(g.productions[0].body.kind == ExprKind::Choice);
}

TEST_CASE("parse errors carry line and column") {
    try {
        parse_grammar("A = 'a'\nB = (");
        FAIL("expected parse_error");
    } catch (const parse_error& e) {
        CHECK(e.line() == 2);
        CHECK(e.column() >= 5);
    }
    CHECK_THROWS_AS(parse_grammar("A = 'a'\nA = 'b'"), parse_error);
    CHECK_THROWS_AS(parse_grammar("A = []"), parse_error);
    CHECK_THROWS_AS(parse_grammar("A = 'unterminated"), parse_error);
}

TEST_CASE("xml figure validates cleanly") {
    Grammar g = testsupport::load_corpus("xml");
    CHECK(validate_grammar(g).empty());
}

TEST_CASE("direct left recursion is reported") {
    Grammar g = parse_grammar("A = A 'a'");
    auto diags = validate_grammar(g);
    REQUIRE(diags.size() == 1);
    CHECK(diags[0].kind == DiagnosticKind::LeftRecursion);
    REQUIRE(diags[0].cycle.size() == 2);
    CHECK(diags[0].cycle[0] == "A");
    CHECK(diags[0].cycle[1] == "A");
}

TEST_CASE("left recursion through a nullable prefix is reported") {
    Grammar g = parse_grammar("A = B? A 'x'\nB = 'b'");
    auto diags = validate_grammar(g);
    REQUIRE_FALSE(diags.empty());
    CHECK(diags[0].kind == DiagnosticKind::LeftRecursion);

    // consuming prefix blocks the cycle
    Grammar ok = parse_grammar("A = 'a' A / ''");
    CHECK(validate_grammar(ok).empty());

    // recursion reachable through a predicate diverges too
    Grammar pred = parse_grammar("A = !A 'x'");
    auto pd = validate_grammar(pred);
    REQUIRE_FALSE(pd.empty());
    CHECK(pd[0].kind == DiagnosticKind::LeftRecursion);
}

TEST_CASE("nullable repetition bodies are reported") {
    Grammar g = parse_grammar("A = (''* )*");
    auto diags = validate_grammar(g);
    REQUIRE_FALSE(diags.empty());
    for (const auto& d : diags) CHECK(d.kind == DiagnosticKind::NullableRepetition);

    Grammar g2 = parse_grammar("A = ('a'?)*");
    auto d2 = validate_grammar(g2);
    REQUIRE_FALSE(d2.empty());
    CHECK(d2[0].kind == DiagnosticKind::NullableRepetition);
}

TEST_CASE("unresolved references are reported") {
    Grammar g = parse_grammar("A = B 'x'");
    auto diags = validate_grammar(g);
    REQUIRE(diags.size() == 1);
    CHECK(diags[0].kind == DiagnosticKind::Unresolved);
    CHECK(diags[0].detail == "B");
}

TEST_CASE("interpreter matches the csv example") {
    Grammar g = parse_grammar(kCsvSource);
    auto r = interpret(g, "a,b\nc,d\n");
    CHECK(r.matched);
    CHECK(r.end_pos == 8);
}

TEST_CASE("interpreter basics at end of input") {
    Grammar g = parse_grammar("A = 'a'");
    auto r = interpret(g, "");
    CHECK_FALSE(r.matched);
    CHECK(r.end_pos == 0);
}

TEST_CASE("negation succeeds without consuming") {
    Grammar g = parse_grammar("A = !'c'");
    auto r = interpret(g, "b");
    CHECK(r.matched);
    CHECK(r.end_pos == 0);
}

TEST_CASE("interpreter depth limit reports runaway recursion") {
    Grammar g = parse_grammar("A = 'a' A / ''");
    InterpretConfig cfg;
    cfg.max_depth = 50;
    CHECK_THROWS_AS(interpret(g, std::string(200, 'a'), 0, cfg), interpret_error);
    // within the limit it is fine
    cfg.max_depth = 10000;
    auto r = interpret(g, std::string(200, 'a'), 0, cfg);
    CHECK(r.matched);
    CHECK(r.end_pos == 200);
}

TEST_CASE("interpret from a nonzero start position") {
    Grammar g = parse_grammar("A = 'bc'");
    auto r = interpret(g, "abcd", 1);
    CHECK(r.matched);
    CHECK(r.end_pos == 3);
    auto miss = interpret(g, "abcd", 2);
    CHECK_FALSE(miss.matched);
    CHECK(miss.end_pos == 2);
}

TEST_CASE("predicates never consume (property)") {
    testsupport::RandomGrammar gen(2024);
    for (int i = 0; i < 200; ++i) {
        Grammar g = gen.next();
        Grammar wrapped;
        wrapped.start = "W";
        Expression inner = Expression::nonterminal("P0");
        wrapped.productions.push_back(
            {"W", i % 2 ? Expression::not_pred(inner) : Expression::and_pred(inner)});
        for (auto& p : g.productions) wrapped.productions.push_back(p);
        std::string in = gen.input();
        InterpretConfig cfg;
        cfg.max_work = 1000000;
        try {
            auto r = interpret(wrapped, in, 0, cfg);
            CHECK(r.end_pos == 0);  // never consumes, match or not
        } catch (const interpret_error&) {
        }
    }
}

TEST_CASE("prioritized choice takes the first matching alternative (property)") {
    testsupport::RandomGrammar gen(77);
    int checked = 0;
    while (checked < 200) {
        Grammar g1 = gen.next();
        Grammar g2 = gen.next();
        std::string in = gen.input();
        Grammar choice;
        choice.start = "C";
        std::vector<Expression> alts{Expression::nonterminal("A0"),
                                     Expression::nonterminal("B0")};
        choice.productions.push_back({"C", Expression::choice(std::move(alts))});
        for (auto& p : g1.productions)
            choice.productions.push_back({"A" + p.name.substr(1), rename(p.body, "A")});
        for (auto& p : g2.productions)
            choice.productions.push_back({"B" + p.name.substr(1), rename(p.body, "B")});
        InterpretConfig cfg;
        cfg.max_work = 1000000;
        try {
            auto first = interpret(g1, in, 0, cfg);
            auto whole = interpret(choice, in, 0, cfg);
            if (first.matched) {
                CHECK(whole.matched);
                CHECK(whole.end_pos == first.end_pos);
            }
            ++checked;
        } catch (const interpret_error&) {
        }
    }
}

TEST_CASE("repetition is greedy and never fails (property)") {
    testsupport::RandomGrammar gen(99);
    int checked = 0;
    while (checked < 200) {
        Grammar g = gen.next();
        Grammar star;
        star.start = "S";
        star.productions.push_back({"S", Expression::zero_or_more(Expression::nonterminal("P0"))});
        for (auto& p : g.productions) star.productions.push_back(p);
        if (!validate_grammar(star).empty()) continue;  // nullable body
        std::string in = gen.input();
        InterpretConfig cfg;
        cfg.max_work = 1000000;
        try {
            auto r = interpret(star, in, 0, cfg);
            CHECK(r.matched);
            ++checked;
        } catch (const interpret_error&) {
        }
    }
}

TEST_CASE("pretty-print round-trips the ast") {
    testsupport::RandomGrammar gen(4242);
    for (int i = 0; i < 300; ++i) {
        Grammar g = gen.next();
        std::string text = pretty_print(g);
        Grammar back = parse_grammar(text);
        REQUIRE(back.productions.size() == g.productions.size());
        for (std::size_t p = 0; p < g.productions.size(); ++p) {
            CHECK(back.productions[p].name == g.productions[p].name);
            CHECK(back.productions[p].body == g.productions[p].body);
        }
    }
    // corpus files round-trip too
    for (const auto& name : testsupport::corpus_names()) {
        Grammar g = testsupport::load_corpus(name);
        Grammar back = parse_grammar(pretty_print(g));
        REQUIRE(back.productions.size() == g.productions.size());
        for (std::size_t p = 0; p < g.productions.size(); ++p)
            CHECK(back.productions[p].body == g.productions[p].body);
    }
}

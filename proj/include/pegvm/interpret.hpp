// pegvm - PEG bytecode compiler and parsing virtual machine
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string_view>

#include "pegvm/grammar.hpp"

namespace pegvm {

struct InterpretResult {
    bool matched = false;
    std::size_t end_pos = 0;
};

class interpret_error : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InterpretConfig {
    std::size_t max_depth = 10000;
    // 0 = unbounded. A budget on evaluation steps lets callers bail out of
    // grammars with pathological backtracking instead of waiting on them.
    std::size_t max_work = 0;
};

namespace detail {

class Interpreter {
public:
    Interpreter(const Grammar& g, std::string_view input, InterpretConfig cfg)
        : g_(g), input_(input), cfg_(cfg) {}

    InterpretResult run(std::size_t start_pos) {
        auto r = eval(g_.start_production().body, start_pos, 0);
        if (!r.ok) return {false, start_pos};
        return {true, r.pos};
    }

private:
    struct Outcome {
        bool ok;
        std::size_t pos;
    };

    const Grammar& g_;
    std::string_view input_;
    InterpretConfig cfg_;
    std::size_t work_ = 0;

    static Outcome failure(std::size_t pos) { return {false, pos}; }

    std::uint8_t at(std::size_t pos) const {
        return static_cast<std::uint8_t>(input_[pos]);
    }

    Outcome eval(const Expression& e, std::size_t pos, std::size_t depth) {
        if (depth > cfg_.max_depth)
            throw interpret_error("recursion depth limit exceeded");
        if (cfg_.max_work && ++work_ > cfg_.max_work)
            throw interpret_error("evaluation budget exceeded");

        switch (e.kind) {
        case ExprKind::Empty:
            return {true, pos};
        case ExprKind::Char:
            if (pos < input_.size() && at(pos) == e.ch) return {true, pos + 1};
            return failure(pos);
        case ExprKind::CharClass:
            if (pos < input_.size() && e.klass.test(at(pos))) return {true, pos + 1};
            return failure(pos);
        case ExprKind::Any:
            if (pos < input_.size()) return {true, pos + 1};
            return failure(pos);
        case ExprKind::Literal:
            if (input_.substr(pos, e.bytes.size()) == e.bytes)
                return {true, pos + e.bytes.size()};
            return failure(pos);
        case ExprKind::Nonterminal:
            return eval(g_.find(e.name)->body, pos, depth + 1);
        case ExprKind::Sequence: {
            std::size_t p = pos;
            for (const auto& c : e.children) {
                Outcome r = eval(c, p, depth + 1);
                if (!r.ok) return failure(pos);
                p = r.pos;
            }
            return {true, p};
        }
        case ExprKind::Choice: {
            for (const auto& c : e.children) {
                Outcome r = eval(c, pos, depth + 1);
                if (r.ok) return r;
            }
            return failure(pos);
        }
        case ExprKind::Option: {
            Outcome r = eval(e.child(), pos, depth + 1);
            return r.ok ? r : Outcome{true, pos};
        }
        case ExprKind::ZeroOrMore: {
            std::size_t p = pos;
            for (;;) {
                Outcome r = eval(e.child(), p, depth + 1);
                if (!r.ok) return {true, p};
                p = r.pos;
            }
        }
        case ExprKind::OneOrMore: {
            Outcome first = eval(e.child(), pos, depth + 1);
            if (!first.ok) return failure(pos);
            std::size_t p = first.pos;
            for (;;) {
                Outcome r = eval(e.child(), p, depth + 1);
                if (!r.ok) return {true, p};
                p = r.pos;
            }
        }
        case ExprKind::And: {
            Outcome r = eval(e.child(), pos, depth + 1);
            return r.ok ? Outcome{true, pos} : failure(pos);
        }
        case ExprKind::Not: {
            Outcome r = eval(e.child(), pos, depth + 1);
            return r.ok ? failure(pos) : Outcome{true, pos};
        }
        }
        return failure(pos);
    }
};

} // namespace detail

// Reference evaluation of the grammar on raw bytes: greedy repetition,
// prioritized choice, non-consuming predicates. Callers should have the
// grammar validated first; the depth limit turns runaway recursion into an
// interpret_error rather than a crash.
inline InterpretResult interpret(const Grammar& g, std::string_view input,
                                 std::size_t start_pos = 0, InterpretConfig cfg = {}) {
    return detail::Interpreter(g, input, cfg).run(start_pos);
}

} // namespace pegvm

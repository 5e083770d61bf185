// pegvm - PEG bytecode compiler and parsing virtual machine
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "pegvm/code.hpp"
#include "pegvm/grammar.hpp"

namespace pegvm {

// Append-only code sink used by the expression compiler. Labels are
// allocated first and bound to an index once the position is known.
class CodeEmitter {
public:
    LabelId new_label() {
        block_.labels.push_back(-1);
        return static_cast<LabelId>(block_.labels.size() - 1);
    }

    void bind(LabelId l) {
        block_.labels[static_cast<std::size_t>(l)] =
            static_cast<std::int32_t>(block_.instructions.size());
    }

    void emit(AbstractInstruction ins) { block_.instructions.push_back(std::move(ins)); }
    void emit(Opcode op) { emit(AbstractInstruction::simple(op)); }

    std::size_t size() const { return block_.instructions.size(); }

    CodeBlock take() { return std::move(block_); }

private:
    CodeBlock block_;
};

namespace detail {

inline void compile_choice_of(const std::vector<Expression>& alts, std::size_t first,
                              LabelId fail, CodeEmitter& em);

// The conversion from expressions to instructions. `fail` is where control
// goes when e does not match; the failure flag is still set on arrival.
inline void compile_expr(const Expression& e, LabelId fail, CodeEmitter& em) {
    switch (e.kind) {
    case ExprKind::Empty:
        em.emit(Opcode::Nop);
        return;
    case ExprKind::Char:
        em.emit(AbstractInstruction::with_byte(Opcode::Char, e.ch));
        em.emit(AbstractInstruction::with_label(Opcode::Iffail, fail));
        return;
    case ExprKind::Any:
        em.emit(Opcode::Any);
        em.emit(AbstractInstruction::with_label(Opcode::Iffail, fail));
        return;
    case ExprKind::Nonterminal:
        em.emit(AbstractInstruction::call(e.name));
        em.emit(AbstractInstruction::with_label(Opcode::Iffail, fail));
        return;
    case ExprKind::Literal:
        for (char c : e.bytes) {
            em.emit(AbstractInstruction::with_byte(Opcode::Char,
                                                   static_cast<std::uint8_t>(c)));
            em.emit(AbstractInstruction::with_label(Opcode::Iffail, fail));
        }
        return;
    case ExprKind::CharClass: {
        // Plain form: the choice over the class members as single characters.
        // The lexical pass later collapses the shape back to one cmap.
        std::vector<Expression> alts;
        for (unsigned v = 0; v < 256; ++v)
            if (e.klass.test(v)) alts.push_back(Expression::chr(static_cast<std::uint8_t>(v)));
        if (alts.size() == 1) {
            compile_expr(alts.front(), fail, em);
            return;
        }
        compile_choice_of(alts, 0, fail, em);
        return;
    }
    case ExprKind::Sequence:
        for (const auto& c : e.children) compile_expr(c, fail, em);
        return;
    case ExprKind::Choice:
        compile_choice_of(e.children, 0, fail, em);
        return;
    case ExprKind::Option: {
        LabelId alt = em.new_label();
        LabelId done = em.new_label();
        em.emit(Opcode::Push);
        compile_expr(e.child(), alt, em);
        em.emit(Opcode::Pop);
        em.emit(AbstractInstruction::with_label(Opcode::Jump, done));
        em.bind(alt);
        em.emit(Opcode::Peek);
        em.emit(Opcode::Pop);
        em.emit(Opcode::Succ);
        em.bind(done);
        em.emit(Opcode::Nop);
        return;
    }
    case ExprKind::ZeroOrMore: {
        // Loop form: the body failing exits the repetition with success.
        LabelId head = em.new_label();
        LabelId exit = em.new_label();
        em.bind(head);
        em.emit(Opcode::Push);
        compile_expr(e.child(), exit, em);
        em.emit(Opcode::Pop);
        em.emit(AbstractInstruction::with_label(Opcode::Jump, head));
        em.bind(exit);
        em.emit(Opcode::Peek);
        em.emit(Opcode::Pop);
        em.emit(Opcode::Succ);
        return;
    }
    case ExprKind::OneOrMore:
        compile_expr(e.child(), fail, em);
        compile_expr(Expression::zero_or_more(e.child()), fail, em);
        return;
    case ExprKind::And: {
        LabelId join = em.new_label();
        em.emit(Opcode::Push);
        compile_expr(e.child(), join, em);
        em.bind(join);
        em.emit(Opcode::Peek);
        em.emit(Opcode::Pop);
        em.emit(AbstractInstruction::with_label(Opcode::Iffail, fail));
        return;
    }
    case ExprKind::Not: {
        LabelId alt = em.new_label();
        em.emit(Opcode::Push);
        compile_expr(e.child(), alt, em);
        em.emit(Opcode::Peek);
        em.emit(Opcode::Pop);
        em.emit(Opcode::Fail);
        em.emit(AbstractInstruction::with_label(Opcode::Jump, fail));
        em.bind(alt);
        em.emit(Opcode::Peek);
        em.emit(Opcode::Pop);
        em.emit(Opcode::Succ);
        return;
    }
    }
}

// n-ary choice folds right: e1 / (e2 / ... / en).
inline void compile_choice_of(const std::vector<Expression>& alts, std::size_t first,
                              LabelId fail, CodeEmitter& em) {
    if (first + 1 == alts.size()) {
        compile_expr(alts[first], fail, em);
        return;
    }
    LabelId alt = em.new_label();
    LabelId done = em.new_label();
    em.emit(Opcode::Push);
    compile_expr(alts[first], alt, em);
    em.emit(Opcode::Pop);
    em.emit(AbstractInstruction::with_label(Opcode::Jump, done));
    em.bind(alt);
    em.emit(Opcode::Peek);
    em.emit(Opcode::Pop);
    em.emit(Opcode::Succ);
    compile_choice_of(alts, first + 1, fail, em);
    em.bind(done);
    em.emit(Opcode::Nop);
}

} // namespace detail

inline void compile_expression(const Expression& e, LabelId fail_label, CodeEmitter& em) {
    detail::compile_expr(e, fail_label, em);
}

// Number of instructions the expression compiles to; used by the inliner.
inline std::size_t trial_compile_size(const Expression& e) {
    CodeEmitter em;
    LabelId l = em.new_label();
    compile_expression(e, l, em);
    return em.size();
}

// Emits the prologue [call start; exit] followed by one region per
// production. A body's failure falls through to the production's own ret, so
// the failure flag travels back to the caller's iffail.
inline CodeBlock compile_grammar(const Grammar& g) {
    CodeEmitter em;
    std::vector<ProductionEntry> entries;
    em.emit(AbstractInstruction::call(g.start));
    em.emit(Opcode::Exit);
    for (const auto& p : g.productions) {
        LabelId entry = em.new_label();
        LabelId fail = em.new_label();
        em.bind(entry);
        entries.push_back({p.name, entry});
        detail::compile_expr(p.body, fail, em);
        em.bind(fail);
        em.emit(Opcode::Ret);
    }
    CodeBlock cb = em.take();
    cb.entries = std::move(entries);
    cb.start = g.start;
    if (auto err = check_stack_balance(cb))
        throw code_error("compiled code failed stack balance check: " + *err);
    return cb;
}

} // namespace pegvm

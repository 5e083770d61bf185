// pegvm - PEG bytecode compiler and parsing virtual machine
#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "pegvm/bytecode.hpp"

namespace pegvm {

struct RunConfig {
    // One slot holds a saved position or a return address (4 bytes each).
    // 512 slots covers several hundred nested nonterminal calls.
    std::size_t stack_slots = 512;
    // 0 derives the budget from the input: 64 * length + 4096. The limit
    // turns non-terminating bytecode into a reportable error.
    std::uint64_t step_limit = 0;
};

enum class RunError : std::uint8_t {
    None = 0,
    StackOverflow,
    StackUnderflow,
    StepLimit,
    BadPc,  // control flow ran off the code section (malformed image)
};

struct ParseResult {
    bool matched = false;
    std::size_t consumed = 0;
    std::size_t max_stack_depth = 0;  // high-water, in slots
    std::uint64_t steps = 0;
    RunError error = RunError::None;
    // Counts consuming/call instructions executed while the failure flag was
    // set. Compiler output never triggers this; the tests assert zero.
    std::uint64_t discipline_violations = 0;
};

// The four-value machine state (pc, pos, sp, r) plus its private stack. The
// stack interleaves saved positions and return addresses; the compiler's
// balance discipline keeps them from being confused.
struct MachineState {
    std::int32_t pc = 0;
    std::size_t pos = 0;
    std::size_t sp = 0;
    bool ok = true;  // r: true = success, false = failure
    std::vector<std::uint32_t> stack;
    std::size_t max_sp = 0;
    std::uint64_t discipline_violations = 0;

    MachineState(const Program& p, std::size_t stack_slots)
        : pc(p.start), stack(stack_slots) {}
};

enum class StepStatus : std::uint8_t {
    Running,
    Halted,
    StackOverflow,
    StackUnderflow,
    BadPc,
};

// Applies exactly one instruction transition. Deterministic; exposed for
// property tests and tracing.
inline StepStatus step(MachineState& st, const Program& p, std::string_view input) {
    if (st.pc < 0 || static_cast<std::size_t>(st.pc) >= p.code.size())
        return StepStatus::BadPc;
    const Program::Instruction ins = p.code[static_cast<std::size_t>(st.pc)];
    const std::size_t len = input.size();
    auto byte_at = [&](std::size_t i) { return static_cast<std::uint8_t>(input[i]); };
    auto push_word = [&](std::uint32_t w) -> bool {
        if (st.sp >= st.stack.size()) return false;
        st.stack[st.sp++] = w;
        if (st.sp > st.max_sp) st.max_sp = st.sp;
        return true;
    };
    // bounds-checked: a malformed image can leave pos past the end
    auto starts_with = [&](const std::string& s) {
        return st.pos + s.size() <= len && input.compare(st.pos, s.size(), s) == 0;
    };

    switch (ins.op) {
    case Opcode::Nop:
        ++st.pc;
        return StepStatus::Running;
    case Opcode::Succ:
        st.ok = true;
        ++st.pc;
        return StepStatus::Running;
    case Opcode::Fail:
        st.ok = false;
        ++st.pc;
        return StepStatus::Running;
    case Opcode::Char:
        if (!st.ok) ++st.discipline_violations;
        if (st.pos < len && byte_at(st.pos) == static_cast<std::uint8_t>(ins.arg)) {
            ++st.pos;
            st.ok = true;
        } else {
            st.ok = false;
        }
        ++st.pc;
        return StepStatus::Running;
    case Opcode::Any:
        if (!st.ok) ++st.discipline_violations;
        if (st.pos < len) {
            ++st.pos;
            st.ok = true;
        } else {
            st.ok = false;
        }
        ++st.pc;
        return StepStatus::Running;
    case Opcode::Jump:
        st.pc = ins.arg;
        return StepStatus::Running;
    case Opcode::Iffail:
        st.pc = st.ok ? st.pc + 1 : ins.arg;
        return StepStatus::Running;
    case Opcode::Call:
        if (!st.ok) ++st.discipline_violations;
        if (!push_word(static_cast<std::uint32_t>(st.pc + 1))) return StepStatus::StackOverflow;
        st.pc = ins.arg;
        return StepStatus::Running;
    case Opcode::Ret:
        if (st.sp == 0) return StepStatus::StackUnderflow;
        st.pc = static_cast<std::int32_t>(st.stack[--st.sp]);
        return StepStatus::Running;
    case Opcode::Push:
        if (!push_word(static_cast<std::uint32_t>(st.pos))) return StepStatus::StackOverflow;
        ++st.pc;
        return StepStatus::Running;
    case Opcode::Pop:
        if (st.sp == 0) return StepStatus::StackUnderflow;
        --st.sp;
        ++st.pc;
        return StepStatus::Running;
    case Opcode::Peek:
        if (st.sp == 0) return StepStatus::StackUnderflow;
        st.pos = st.stack[st.sp - 1];
        ++st.pc;
        return StepStatus::Running;
    case Opcode::Peekpop:
        if (st.sp == 0) return StepStatus::StackUnderflow;
        st.pos = st.stack[--st.sp];
        ++st.pc;
        return StepStatus::Running;
    case Opcode::Str: {
        if (!st.ok) ++st.discipline_violations;
        const std::string& s = p.strings[static_cast<std::size_t>(ins.arg)];
        if (starts_with(s)) {
            st.pos += s.size();
            st.ok = true;
        } else {
            st.ok = false;  // atomic: no partial consumption
        }
        ++st.pc;
        return StepStatus::Running;
    }
    case Opcode::Cmap: {
        if (!st.ok) ++st.discipline_violations;
        const ByteSet& m = p.bitmaps[static_cast<std::size_t>(ins.arg)];
        if (st.pos < len && m.test(byte_at(st.pos))) {
            ++st.pos;
            st.ok = true;
        } else {
            st.ok = false;
        }
        ++st.pc;
        return StepStatus::Running;
    }
    case Opcode::Nchar:
        if (!st.ok) ++st.discipline_violations;
        st.ok = !(st.pos < len && byte_at(st.pos) == static_cast<std::uint8_t>(ins.arg));
        ++st.pc;
        return StepStatus::Running;
    case Opcode::Nstr:
        if (!st.ok) ++st.discipline_violations;
        st.ok = !starts_with(p.strings[static_cast<std::size_t>(ins.arg)]);
        ++st.pc;
        return StepStatus::Running;
    case Opcode::Ostr: {
        if (!st.ok) ++st.discipline_violations;
        const std::string& s = p.strings[static_cast<std::size_t>(ins.arg)];
        if (starts_with(s)) st.pos += s.size();
        st.ok = true;
        ++st.pc;
        return StepStatus::Running;
    }
    case Opcode::Ocmap: {
        if (!st.ok) ++st.discipline_violations;
        const ByteSet& m = p.bitmaps[static_cast<std::size_t>(ins.arg)];
        if (st.pos < len && m.test(byte_at(st.pos))) ++st.pos;
        st.ok = true;
        ++st.pc;
        return StepStatus::Running;
    }
    case Opcode::Rcmap: {
        if (!st.ok) ++st.discipline_violations;
        const ByteSet& m = p.bitmaps[static_cast<std::size_t>(ins.arg)];
        while (st.pos < len && m.test(byte_at(st.pos))) ++st.pos;
        st.ok = true;
        ++st.pc;
        return StepStatus::Running;
    }
    case Opcode::Exit:
        return StepStatus::Halted;
    }
    return StepStatus::BadPc;
}

// Executes the program from its start state until exit or an error. The
// result reports consumed bytes only for a match; a failed parse reports
// zero, mirroring the reference interpreter's contract.
inline ParseResult run(const Program& p, std::string_view input, RunConfig cfg = {}) {
    ParseResult result;
    if (p.code.empty()) return result;
    std::uint64_t limit = cfg.step_limit
                              ? cfg.step_limit
                              : 64 * static_cast<std::uint64_t>(input.size()) + 4096;
    MachineState st(p, cfg.stack_slots < 2 ? 2 : cfg.stack_slots);
    for (;;) {
        if (result.steps >= limit) {
            result.error = RunError::StepLimit;
            break;
        }
        ++result.steps;
        StepStatus s = step(st, p, input);
        if (s == StepStatus::Running) continue;
        if (s == StepStatus::Halted) {
            result.matched = st.ok;
            result.consumed = st.ok ? st.pos : 0;
        } else if (s == StepStatus::StackOverflow) {
            result.error = RunError::StackOverflow;
        } else if (s == StepStatus::StackUnderflow) {
            result.error = RunError::StackUnderflow;
        } else {
            result.error = RunError::BadPc;
        }
        break;
    }
    result.max_stack_depth = st.max_sp;
    result.discipline_violations = st.discipline_violations;
    return result;
}

} // namespace pegvm

// pegvm - PEG bytecode compiler and parsing virtual machine
#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pegvm/grammar.hpp"

namespace pegvm {

// Opcode values are frozen; they are the on-disk encoding.
enum class Opcode : std::uint8_t {
    Nop = 0,
    Succ = 1,
    Fail = 2,
    Char = 3,
    Any = 4,
    Jump = 5,
    Iffail = 6,
    Call = 7,
    Ret = 8,
    Push = 9,
    Pop = 10,
    Peek = 11,
    Str = 12,
    Cmap = 13,
    Nchar = 14,
    Nstr = 15,
    Ostr = 16,
    Ocmap = 17,
    Rcmap = 18,
    Peekpop = 19,
    Exit = 20,
};

constexpr int kOpcodeCount = 21;

inline const char* opcode_name(Opcode op) {
    static const char* names[kOpcodeCount] = {
        "nop", "succ", "fail", "char", "any", "jump", "iffail", "call", "ret",
        "push", "pop", "peek", "str", "cmap", "nchar", "nstr", "ostr", "ocmap",
        "rcmap", "peekpop", "exit",
    };
    return names[static_cast<int>(op)];
}

enum class ArgKind { None, Byte, Bytes, Bitmap, Label, ProductionName };

inline ArgKind arg_kind_of(Opcode op) {
    switch (op) {
    case Opcode::Char:
    case Opcode::Nchar: return ArgKind::Byte;
    case Opcode::Str:
    case Opcode::Nstr:
    case Opcode::Ostr: return ArgKind::Bytes;
    case Opcode::Cmap:
    case Opcode::Ocmap:
    case Opcode::Rcmap: return ArgKind::Bitmap;
    case Opcode::Jump:
    case Opcode::Iffail: return ArgKind::Label;
    case Opcode::Call: return ArgKind::ProductionName;
    default: return ArgKind::None;
    }
}

using LabelId = std::int32_t;

// One abstract instruction. At most one argument; which field is meaningful
// follows from the opcode (arg_kind_of).
struct AbstractInstruction {
    Opcode op = Opcode::Nop;
    std::uint8_t byte = 0;    // char/nchar
    std::string bytes;        // str/nstr/ostr and call target name
    ByteSet bitmap;           // cmap/ocmap/rcmap
    LabelId label = -1;       // jump/iffail

    static AbstractInstruction simple(Opcode op) {
        AbstractInstruction i; i.op = op; return i;
    }
    static AbstractInstruction with_byte(Opcode op, std::uint8_t b) {
        AbstractInstruction i; i.op = op; i.byte = b; return i;
    }
    static AbstractInstruction with_bytes(Opcode op, std::string s) {
        AbstractInstruction i; i.op = op; i.bytes = std::move(s); return i;
    }
    static AbstractInstruction with_bitmap(Opcode op, ByteSet m) {
        AbstractInstruction i; i.op = op; i.bitmap = m; return i;
    }
    static AbstractInstruction with_label(Opcode op, LabelId l) {
        AbstractInstruction i; i.op = op; i.label = l; return i;
    }
    static AbstractInstruction call(std::string production) {
        AbstractInstruction i; i.op = Opcode::Call; i.bytes = std::move(production); return i;
    }
};

inline bool operator==(const AbstractInstruction& a, const AbstractInstruction& b) {
    if (a.op != b.op) return false;
    switch (arg_kind_of(a.op)) {
    case ArgKind::Byte: return a.byte == b.byte;
    case ArgKind::Bytes:
    case ArgKind::ProductionName: return a.bytes == b.bytes;
    case ArgKind::Bitmap: return a.bitmap == b.bitmap;
    case ArgKind::Label: return a.label == b.label;
    case ArgKind::None: return true;
    }
    return true;
}

struct ProductionEntry {
    std::string name;
    LabelId entry;
};

class code_error : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Assembled whole-grammar code prior to encoding. Labels are indirect: the
// table maps label ids to instruction indices so passes can splice
// instructions without touching every branch.
struct CodeBlock {
    std::vector<AbstractInstruction> instructions;
    std::vector<std::int32_t> labels;       // label id -> instruction index
    std::vector<ProductionEntry> entries;   // production name -> entry label
    std::string start;

    std::int32_t target_of(LabelId l) const { return labels.at(static_cast<std::size_t>(l)); }

    const ProductionEntry* find_entry(std::string_view name) const {
        for (const auto& e : entries)
            if (e.name == name) return &e;
        return nullptr;
    }

    std::int32_t entry_index(std::string_view name) const {
        const ProductionEntry* e = find_entry(name);
        if (!e) throw code_error("unknown production '" + std::string(name) + "'");
        return target_of(e->entry);
    }

    // True for each instruction index some branch or entry label points at.
    std::vector<bool> referenced_targets() const {
        std::vector<bool> t(instructions.size() + 1, false);
        auto mark_label = [&](LabelId l) {
            std::int32_t idx = target_of(l);
            if (idx >= 0 && static_cast<std::size_t>(idx) < t.size()) t[idx] = true;
        };
        for (const auto& ins : instructions) {
            if (arg_kind_of(ins.op) == ArgKind::Label) mark_label(ins.label);
        }
        for (const auto& e : entries) mark_label(e.entry);
        return t;
    }

    std::size_t code_section_bytes() const { return instructions.size() * 2; }
};

namespace detail {

// Successors of instruction i in the intra-production control graph. Call is
// treated as straight-line (stack-neutral by induction); Ret/Exit terminate.
inline void successors(const CodeBlock& cb, std::size_t i, std::vector<std::size_t>& out) {
    out.clear();
    const AbstractInstruction& ins = cb.instructions[i];
    switch (ins.op) {
    case Opcode::Jump:
        out.push_back(static_cast<std::size_t>(cb.target_of(ins.label)));
        return;
    case Opcode::Iffail:
        out.push_back(i + 1);
        out.push_back(static_cast<std::size_t>(cb.target_of(ins.label)));
        return;
    case Opcode::Ret:
    case Opcode::Exit:
        return;
    default:
        out.push_back(i + 1);
        return;
    }
}

} // namespace detail

// Verifies that along every path from each production entry (and from the
// program start) to its ret, pushes and pops balance and the stack never dips
// below the entry level. Returns an error description, or nullopt if clean.
inline std::optional<std::string> check_stack_balance(const CodeBlock& cb) {
    std::vector<std::size_t> roots;
    roots.push_back(0);
    for (const auto& e : cb.entries)
        roots.push_back(static_cast<std::size_t>(cb.target_of(e.entry)));

    for (std::size_t root : roots) {
        std::vector<int> depth(cb.instructions.size(), -1);
        std::vector<std::size_t> work;
        depth[root] = 0;
        work.push_back(root);
        std::vector<std::size_t> succ;
        while (!work.empty()) {
            std::size_t i = work.back();
            work.pop_back();
            int d = depth[i];
            const AbstractInstruction& ins = cb.instructions[i];
            int nd = d;
            switch (ins.op) {
            case Opcode::Push: nd = d + 1; break;
            case Opcode::Pop:
            case Opcode::Peekpop:
                if (d < 1) return "stack underflow at instruction " + std::to_string(i);
                nd = d - 1;
                break;
            case Opcode::Peek:
                if (d < 1) return "peek below frame at instruction " + std::to_string(i);
                break;
            case Opcode::Ret:
                if (d != 0) return "unbalanced ret at instruction " + std::to_string(i) +
                                   " (depth " + std::to_string(d) + ")";
                continue;
            case Opcode::Exit:
                if (d != 0) return "unbalanced exit at instruction " + std::to_string(i);
                continue;
            default: break;
            }
            detail::successors(cb, i, succ);
            for (std::size_t s : succ) {
                if (s >= cb.instructions.size())
                    return "control flow past end at instruction " + std::to_string(i);
                if (depth[s] == -1) {
                    depth[s] = nd;
                    work.push_back(s);
                } else if (depth[s] != nd) {
                    return "inconsistent stack depth joining at instruction " + std::to_string(s);
                }
            }
        }
    }
    return std::nullopt;
}

inline bool sets_failure(Opcode op) {
    switch (op) {
    case Opcode::Char:
    case Opcode::Any:
    case Opcode::Str:
    case Opcode::Cmap:
    case Opcode::Nchar:
    case Opcode::Nstr:
    case Opcode::Call:
        return true;
    default:
        return false;
    }
}

inline bool defined_on_failure(Opcode op) {
    switch (op) {
    case Opcode::Iffail:
    case Opcode::Succ:
    case Opcode::Ret:
    case Opcode::Peek:
    case Opcode::Pop:
    case Opcode::Peekpop:
    case Opcode::Fail:
    case Opcode::Jump:
    case Opcode::Exit:
        return true;
    default:
        return false;
    }
}

// Every instruction that can leave the machine in the failure state must fall
// through to one that is defined for it; the consuming instructions are not.
inline std::optional<std::string> check_failure_discipline(const CodeBlock& cb) {
    for (std::size_t i = 0; i < cb.instructions.size(); ++i) {
        if (!sets_failure(cb.instructions[i].op)) continue;
        if (i + 1 >= cb.instructions.size())
            return "failure-setting instruction at end of code (" + std::to_string(i) + ")";
        if (!defined_on_failure(cb.instructions[i + 1].op))
            return "instruction " + std::to_string(i) + " (" +
                   opcode_name(cb.instructions[i].op) + ") may fail into " +
                   opcode_name(cb.instructions[i + 1].op);
    }
    return std::nullopt;
}

} // namespace pegvm

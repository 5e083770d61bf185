// pegvm - PEG bytecode compiler and parsing virtual machine
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pegvm/code.hpp"
#include "pegvm/compiler.hpp"
#include "pegvm/grammar.hpp"

namespace pegvm {

// Downsizing passes. Fixed pipeline order: inline -> flow -> peephole ->
// lexical -> unary. Lexical must run before unary because the unary forms
// take str/cmap operands.
struct OptimizationConfig {
    bool inlining = true;
    bool flow = true;
    bool peephole = true;
    bool lexical = true;
    bool unary = true;

    static OptimizationConfig all() { return {}; }
    static OptimizationConfig none() { return {false, false, false, false, false}; }
};

// ---------------------------------------------------------------------------
// Cost-based inlining (works on the grammar, before code generation).
// ---------------------------------------------------------------------------

namespace detail {

inline void count_refs(const Expression& e, const std::string& name, std::size_t& count) {
    if (e.kind == ExprKind::Nonterminal && e.name == name) ++count;
    for (const auto& c : e.children) count_refs(c, name, count);
}

inline void direct_refs(const Expression& e, std::vector<std::string>& out) {
    if (e.kind == ExprKind::Nonterminal) out.push_back(e.name);
    for (const auto& c : e.children) direct_refs(c, out);
}

inline bool is_recursive(const Grammar& g, const std::string& name) {
    // Depth-first reachability from `name` back to itself.
    std::vector<std::string> stack{name};
    std::vector<std::string> seen;
    while (!stack.empty()) {
        std::string cur = stack.back();
        stack.pop_back();
        const Production* p = g.find(cur);
        if (!p) continue;
        std::vector<std::string> refs;
        direct_refs(p->body, refs);
        for (const auto& r : refs) {
            if (r == name) return true;
            bool visited = false;
            for (const auto& s : seen)
                if (s == r) { visited = true; break; }
            if (!visited) {
                seen.push_back(r);
                stack.push_back(r);
            }
        }
    }
    return false;
}

inline Expression substitute(const Expression& e, const std::string& name,
                             const Expression& body) {
    if (e.kind == ExprKind::Nonterminal && e.name == name) return body;
    Expression out = e;
    for (auto& c : out.children) c = substitute(c, name, body);
    return out;
}

inline void drop_unreachable(Grammar& g) {
    std::vector<std::string> live{g.start};
    for (std::size_t i = 0; i < live.size(); ++i) {
        const Production* p = g.find(live[i]);
        if (!p) continue;
        std::vector<std::string> refs;
        direct_refs(p->body, refs);
        for (const auto& r : refs) {
            bool seen = false;
            for (const auto& l : live)
                if (l == r) { seen = true; break; }
            if (!seen) live.push_back(r);
        }
    }
    std::vector<Production> kept;
    for (auto& p : g.productions) {
        for (const auto& l : live)
            if (p.name == l) { kept.push_back(std::move(p)); break; }
    }
    g.productions = std::move(kept);
}

} // namespace detail

// Replaces nonterminal references with the production body when the body
// compiles to at most two instructions or the production has a single
// reference site. Recursive productions are never inlined; productions left
// unreachable from the start are dropped.
inline Grammar inline_pass(const Grammar& g) {
    Grammar out = g;
    std::size_t guard = out.productions.size() + 8;
    for (std::size_t round = 0; round < guard; ++round) {
        bool fired = false;
        for (const auto& p : out.productions) {
            std::size_t sites = 0;
            for (const auto& q : out.productions)
                detail::count_refs(q.body, p.name, sites);
            if (sites == 0) continue;
            if (detail::is_recursive(out, p.name)) continue;
            bool small = trial_compile_size(p.body) <= 2;
            if (!small && sites != 1) continue;
            Expression body = p.body;
            std::string name = p.name;
            for (auto& q : out.productions) {
                if (q.name == name) continue;
                q.body = detail::substitute(q.body, name, body);
            }
            detail::drop_unreachable(out);
            fired = true;
            break;
        }
        if (!fired) break;
    }
    return out;
}

// ---------------------------------------------------------------------------
// CodeBlock surgery shared by the code-level passes.
// ---------------------------------------------------------------------------

namespace detail {

// Removes the instructions marked in `remove`. Labels pointing at a removed
// instruction slide forward to the next kept one.
inline CodeBlock filter_instructions(const CodeBlock& cb, const std::vector<bool>& remove) {
    const std::size_t n = cb.instructions.size();
    std::vector<std::int32_t> new_index(n + 1, 0);
    std::int32_t kept = 0;
    for (std::size_t i = 0; i < n; ++i) {
        new_index[i] = kept;
        if (!remove[i]) ++kept;
    }
    new_index[n] = kept;
    // forward map: removed index -> index of next kept instruction
    std::vector<std::int32_t> forward(n + 1, kept);
    std::int32_t next = kept;
    for (std::size_t i = n; i-- > 0;) {
        if (!remove[i]) next = new_index[i];
        forward[i] = next;
    }
    CodeBlock out;
    out.start = cb.start;
    out.entries = cb.entries;
    out.labels.reserve(cb.labels.size());
    for (std::int32_t t : cb.labels)
        out.labels.push_back(t < 0 ? t : forward[static_cast<std::size_t>(t)]);
    out.instructions.reserve(static_cast<std::size_t>(kept));
    for (std::size_t i = 0; i < n; ++i)
        if (!remove[i]) out.instructions.push_back(cb.instructions[i]);
    return out;
}

// Replaces [first, last) with `repl`. Labels at `first` stay; labels inside
// the replaced range move past the replacement (callers ensure nothing
// outside still branches to them).
inline CodeBlock splice(const CodeBlock& cb, std::size_t first, std::size_t last,
                        std::vector<AbstractInstruction> repl) {
    const std::int32_t delta =
        static_cast<std::int32_t>(repl.size()) - static_cast<std::int32_t>(last - first);
    CodeBlock out;
    out.start = cb.start;
    out.entries = cb.entries;
    out.labels.reserve(cb.labels.size());
    for (std::int32_t t : cb.labels) {
        if (t < 0 || static_cast<std::size_t>(t) <= first) {
            out.labels.push_back(t);
        } else if (static_cast<std::size_t>(t) < last) {
            out.labels.push_back(static_cast<std::int32_t>(first + repl.size()));
        } else {
            out.labels.push_back(t + delta);
        }
    }
    out.instructions.reserve(cb.instructions.size() + repl.size() - (last - first));
    out.instructions.insert(out.instructions.end(), cb.instructions.begin(),
                            cb.instructions.begin() + static_cast<std::ptrdiff_t>(first));
    out.instructions.insert(out.instructions.end(), repl.begin(), repl.end());
    out.instructions.insert(out.instructions.end(),
                            cb.instructions.begin() + static_cast<std::ptrdiff_t>(last),
                            cb.instructions.end());
    return out;
}

// True if any branch outside [first, last) or any production entry resolves
// to an instruction inside (first, last).
inline bool interior_entered_from_outside(const CodeBlock& cb, std::size_t first,
                                          std::size_t last) {
    auto inside = [&](std::int32_t t) {
        return t > static_cast<std::int32_t>(first) && t < static_cast<std::int32_t>(last);
    };
    for (std::size_t k = 0; k < cb.instructions.size(); ++k) {
        if (k >= first && k < last) continue;
        const auto& ins = cb.instructions[k];
        if (arg_kind_of(ins.op) == ArgKind::Label && inside(cb.target_of(ins.label)))
            return true;
    }
    for (const auto& e : cb.entries)
        if (inside(cb.target_of(e.entry))) return true;
    return false;
}

// ---------------------------------------------------------------------------
// Region micro-execution: runs a code region on tiny probe inputs to confirm
// a rewrite preserves behavior before applying it.
// ---------------------------------------------------------------------------

struct SimExit {
    bool ok_exit = false;       // left the region through fall-through/branch
    std::size_t exit_pc = 0;
    std::size_t pos = 0;
    std::size_t sp = 0;
    bool ok = true;
};

// Executes [first, last) starting at `entry` until control leaves the range.
// Bails (nullopt) on call/ret/exit, stack underflow, or budget exhaustion.
inline std::optional<SimExit> simulate_region(const CodeBlock& cb, std::size_t entry,
                                              std::size_t first, std::size_t last,
                                              std::string_view input,
                                              std::size_t seed_stack) {
    std::size_t pc = entry;
    std::size_t pos = 0;
    bool ok = true;
    std::vector<std::uint32_t> stack(seed_stack, 0);
    const std::size_t len = input.size();
    auto at = [&](std::size_t i) { return static_cast<std::uint8_t>(input[i]); };
    for (std::size_t steps = 0; steps < 4096; ++steps) {
        if (pc < first || pc >= last) {
            SimExit e;
            e.ok_exit = true;
            e.exit_pc = pc;
            e.pos = pos;
            e.sp = stack.size();
            e.ok = ok;
            return e;
        }
        const AbstractInstruction& ins = cb.instructions[pc];
        switch (ins.op) {
        case Opcode::Nop: ++pc; break;
        case Opcode::Succ: ok = true; ++pc; break;
        case Opcode::Fail: ok = false; ++pc; break;
        case Opcode::Char:
            ok = pos < len && at(pos) == ins.byte;
            if (ok) ++pos;
            ++pc;
            break;
        case Opcode::Any:
            ok = pos < len;
            if (ok) ++pos;
            ++pc;
            break;
        case Opcode::Cmap:
            ok = pos < len && ins.bitmap.test(at(pos));
            if (ok) ++pos;
            ++pc;
            break;
        case Opcode::Str:
            ok = input.compare(pos, ins.bytes.size(), ins.bytes) == 0;
            if (ok) pos += ins.bytes.size();
            ++pc;
            break;
        case Opcode::Nchar:
            ok = !(pos < len && at(pos) == ins.byte);
            ++pc;
            break;
        case Opcode::Nstr:
            ok = input.compare(pos, ins.bytes.size(), ins.bytes) != 0;
            ++pc;
            break;
        case Opcode::Ostr:
            if (input.compare(pos, ins.bytes.size(), ins.bytes) == 0) pos += ins.bytes.size();
            ok = true;
            ++pc;
            break;
        case Opcode::Ocmap:
            if (pos < len && ins.bitmap.test(at(pos))) ++pos;
            ok = true;
            ++pc;
            break;
        case Opcode::Jump:
            pc = static_cast<std::size_t>(cb.target_of(ins.label));
            break;
        case Opcode::Iffail:
            if (ok) ++pc;
            else pc = static_cast<std::size_t>(cb.target_of(ins.label));
            break;
        case Opcode::Push:
            stack.push_back(static_cast<std::uint32_t>(pos));
            ++pc;
            break;
        case Opcode::Pop:
            if (stack.empty()) return std::nullopt;
            stack.pop_back();
            ++pc;
            break;
        case Opcode::Peek:
            if (stack.empty()) return std::nullopt;
            pos = stack.back();
            ++pc;
            break;
        case Opcode::Peekpop:
            if (stack.empty()) return std::nullopt;
            pos = stack.back();
            stack.pop_back();
            ++pc;
            break;
        default:
            return std::nullopt;  // call/ret/exit/rcmap: outside this model
        }
    }
    return std::nullopt;
}

// Probes a region with every single byte plus end-of-input and checks it
// behaves as "consume one byte iff it belongs to some set T, else fail to
// `fail_pc` without consuming". Returns T on success.
inline std::optional<ByteSet> probe_single_byte_test(const CodeBlock& cb, std::size_t entry,
                                                     std::size_t first, std::size_t last,
                                                     std::size_t success_pc,
                                                     std::size_t fail_pc,
                                                     std::size_t seed_stack,
                                                     std::size_t exit_sp) {
    ByteSet members;
    for (int x = -1; x < 256; ++x) {
        std::string in;
        if (x >= 0) in.push_back(static_cast<char>(x));
        auto e = simulate_region(cb, entry, first, last, in, seed_stack);
        if (!e) return std::nullopt;
        if (e->exit_pc == success_pc && e->ok && e->pos == 1 && e->sp == exit_sp && x >= 0) {
            members.set(static_cast<std::size_t>(x));
        } else if (e->exit_pc == fail_pc && !e->ok && e->pos == 0 && e->sp == exit_sp) {
            // non-member (or end of input)
        } else {
            return std::nullopt;
        }
    }
    return members;
}

inline bool inspects_input(Opcode op) {
    switch (op) {
    case Opcode::Char:
    case Opcode::Any:
    case Opcode::Cmap:
    case Opcode::Str:
    case Opcode::Nchar:
    case Opcode::Nstr:
    case Opcode::Ostr:
    case Opcode::Ocmap:
    case Opcode::Rcmap:
        return true;
    default:
        return false;
    }
}

inline bool consumes_input(Opcode op) {
    switch (op) {
    case Opcode::Char:
    case Opcode::Any:
    case Opcode::Cmap:
    case Opcode::Str:
    case Opcode::Ostr:
    case Opcode::Ocmap:
        return true;
    default:
        return false;
    }
}

// The single-byte probes can only vary input[0], so a region they certify
// must never look at the input again once it has consumed. This walks the
// unique control path following each consuming instruction (the failure flag
// is known along it) and demands pure cleanup code up to the region exit.
inline bool input_blind_after_consume(const CodeBlock& cb, std::size_t first,
                                      std::size_t last) {
    for (std::size_t k = first; k < last; ++k) {
        if (!consumes_input(cb.instructions[k].op)) continue;
        std::size_t pc = k + 1;
        bool ok = true;
        std::size_t steps = 0;
        while (pc >= first && pc < last) {
            if (++steps > last - first) return false;  // pure-control cycle
            const AbstractInstruction& ins = cb.instructions[pc];
            if (inspects_input(ins.op)) return false;
            switch (ins.op) {
            case Opcode::Iffail:
                pc = ok ? pc + 1 : static_cast<std::size_t>(cb.target_of(ins.label));
                break;
            case Opcode::Jump:
                pc = static_cast<std::size_t>(cb.target_of(ins.label));
                break;
            case Opcode::Succ:
                ok = true;
                ++pc;
                break;
            case Opcode::Fail:
                ok = false;
                ++pc;
                break;
            case Opcode::Nop:
            case Opcode::Push:
            case Opcode::Pop:
            case Opcode::Peek:
            case Opcode::Peekpop:
                ++pc;
                break;
            default:
                return false;  // call/ret/exit do not belong here
            }
        }
    }
    return true;
}

// Ops a probe-verified region may contain: everything here inspects at most
// one byte of lookahead, so the 257 probes are exhaustive.
inline bool probe_safe_op(const AbstractInstruction& ins) {
    switch (ins.op) {
    case Opcode::Nop:
    case Opcode::Succ:
    case Opcode::Fail:
    case Opcode::Char:
    case Opcode::Any:
    case Opcode::Cmap:
    case Opcode::Nchar:
    case Opcode::Ocmap:
    case Opcode::Jump:
    case Opcode::Iffail:
    case Opcode::Push:
    case Opcode::Pop:
    case Opcode::Peek:
    case Opcode::Peekpop:
        return true;
    case Opcode::Str:
    case Opcode::Nstr:
    case Opcode::Ostr:
        return ins.bytes.size() == 1;
    default:
        return false;
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Static flow analysis: removes redundant position saves along failure flow.
// ---------------------------------------------------------------------------

namespace detail {

// Rule: a push immediately following another push saves the same value. Walk
// the flow from behind the pair tracking the duplicate's height; the pops
// that dropped it are deleted together with the push itself. The walk bails
// unless every visited instruction is reached only from within the walk.
inline bool try_collapse_push_pair(const CodeBlock& cb, std::size_t i, CodeBlock& out) {
    const std::size_t n = cb.instructions.size();
    std::vector<bool> targeted = cb.referenced_targets();
    if (targeted[i + 1]) return false;

    std::vector<int> depth(n, -2);  // -2 unvisited
    std::vector<std::size_t> work;
    std::vector<bool> visited(n, false);
    std::vector<bool> drop(n, false);
    if (i + 2 >= n) return false;
    depth[i + 2] = 0;
    work.push_back(i + 2);
    std::vector<std::size_t> succ;
    while (!work.empty()) {
        std::size_t j = work.back();
        work.pop_back();
        visited[j] = true;
        int d = depth[j];
        const AbstractInstruction& ins = cb.instructions[j];
        int nd = d;
        bool resolved = false;
        switch (ins.op) {
        case Opcode::Push: nd = d + 1; break;
        case Opcode::Pop:
            if (d == 0) {
                drop[j] = true;
                resolved = true;
            } else {
                nd = d - 1;
            }
            break;
        case Opcode::Peek: break;  // reads the duplicate or frames above; same value
        case Opcode::Peekpop:
            return false;  // not expected before the peephole pass
        case Opcode::Ret:
        case Opcode::Exit:
            return false;  // duplicate save would leak out of the production
        default: break;
        }
        if (resolved) continue;
        detail::successors(cb, j, succ);
        for (std::size_t s : succ) {
            if (s >= n) return false;
            if (depth[s] == -2) {
                depth[s] = nd;
                work.push_back(s);
            } else if (depth[s] != nd) {
                return false;
            }
        }
    }

    // Every visited instruction may be entered only from the walk (or from
    // the pair being collapsed); an outside entry would see the wrong depth.
    for (std::size_t v = 0; v < n; ++v) {
        if (!visited[v]) continue;
        if (v > 0 && !visited[v - 1] && v - 1 != i + 1) {
            Opcode prev = cb.instructions[v - 1].op;
            if (prev != Opcode::Jump && prev != Opcode::Ret && prev != Opcode::Exit)
                return false;
        }
        for (std::size_t k = 0; k < n; ++k) {
            if (visited[k]) continue;
            const auto& ins = cb.instructions[k];
            if (arg_kind_of(ins.op) == ArgKind::Label &&
                cb.target_of(ins.label) == static_cast<std::int32_t>(v))
                return false;
        }
        for (const auto& e : cb.entries)
            if (cb.target_of(e.entry) == static_cast<std::int32_t>(v)) return false;
    }

    std::vector<bool> remove(n, false);
    remove[i + 1] = true;
    for (std::size_t v = 0; v < n; ++v)
        if (drop[v]) remove[v] = true;
    out = filter_instructions(cb, remove);
    return true;
}

} // namespace detail

// Flow pass: (i) collapses adjacent duplicate position saves, rewiring their
// peek/pop consumers; (ii) cancels a pop immediately re-saved by a push when
// a peek pinned pos to the popped value; (iii) drops nops and jumps to the
// next instruction.
inline CodeBlock flow_pass(CodeBlock cb) {
    for (;;) {
        bool changed = false;
        const std::size_t n = cb.instructions.size();
        std::vector<bool> targeted = cb.referenced_targets();

        // (i) adjacent push; push
        for (std::size_t i = 0; i + 1 < n; ++i) {
            if (cb.instructions[i].op != Opcode::Push) continue;
            if (cb.instructions[i + 1].op != Opcode::Push) continue;
            CodeBlock next;
            if (detail::try_collapse_push_pair(cb, i, next)) {
                cb = std::move(next);
                changed = true;
                break;
            }
        }
        if (changed) continue;

        // (ii) peek; pop; (succ|fail|nop)*; push  ->  peek; mids
        for (std::size_t i = 0; i + 2 < n && !changed; ++i) {
            if (cb.instructions[i].op != Opcode::Peek) continue;
            if (cb.instructions[i + 1].op != Opcode::Pop || targeted[i + 1]) continue;
            std::size_t j = i + 2;
            while (j < n && !targeted[j] &&
                   (cb.instructions[j].op == Opcode::Succ ||
                    cb.instructions[j].op == Opcode::Fail ||
                    cb.instructions[j].op == Opcode::Nop))
                ++j;
            if (j >= n || targeted[j] || cb.instructions[j].op != Opcode::Push) continue;
            std::vector<bool> remove(n, false);
            remove[i + 1] = true;
            remove[j] = true;
            cb = detail::filter_instructions(cb, remove);
            changed = true;
        }
        if (changed) continue;

        // (iii) dead nops (keep a trailing nop run: nothing to retarget onto)
        {
            std::vector<bool> remove(n, false);
            bool seen_tail = false;
            for (std::size_t i = n; i-- > 0;) {
                if (cb.instructions[i].op == Opcode::Nop) {
                    if (seen_tail) remove[i] = true;
                } else {
                    seen_tail = true;
                }
            }
            for (std::size_t i = 0; i < n; ++i)
                if (remove[i]) { changed = true; break; }
            if (changed) {
                cb = detail::filter_instructions(cb, remove);
                continue;
            }
        }

        // (iii) jump to the very next instruction
        for (std::size_t i = 0; i + 1 < n && !changed; ++i) {
            const auto& ins = cb.instructions[i];
            if (ins.op != Opcode::Jump) continue;
            if (cb.target_of(ins.label) != static_cast<std::int32_t>(i + 1)) continue;
            if (i > 0 && sets_failure(cb.instructions[i - 1].op) &&
                !defined_on_failure(cb.instructions[i + 1].op))
                continue;
            std::vector<bool> remove(n, false);
            remove[i] = true;
            cb = detail::filter_instructions(cb, remove);
            changed = true;
        }
        if (!changed) break;
    }
    return cb;
}

// ---------------------------------------------------------------------------
// Peephole specialization: peek; pop -> peekpop.
// ---------------------------------------------------------------------------

inline CodeBlock peephole_pass(CodeBlock cb) {
    for (;;) {
        bool changed = false;
        std::vector<bool> targeted = cb.referenced_targets();
        for (std::size_t i = 0; i + 1 < cb.instructions.size(); ++i) {
            if (cb.instructions[i].op == Opcode::Peek &&
                cb.instructions[i + 1].op == Opcode::Pop && !targeted[i + 1]) {
                cb = detail::splice(cb, i, i + 2,
                                    {AbstractInstruction::simple(Opcode::Peekpop)});
                changed = true;
                break;
            }
        }
        if (!changed) break;
    }
    return cb;
}

// ---------------------------------------------------------------------------
// Lexical specialization: char runs -> str, choice-of-character shapes and
// expanded character classes -> cmap.
// ---------------------------------------------------------------------------

namespace detail {

// Matches `lex; iffail L; lex; iffail L; ...` (same resolved target, interior
// untargeted) and fuses into one str. Singles stay char.
inline bool try_fuse_char_run(const CodeBlock& cb, const std::vector<bool>& targeted,
                              std::size_t i, CodeBlock& out) {
    const std::size_t n = cb.instructions.size();
    auto unit_bytes = [&](std::size_t k) -> std::optional<std::string> {
        const auto& ins = cb.instructions[k];
        if (ins.op == Opcode::Char) return std::string(1, static_cast<char>(ins.byte));
        if (ins.op == Opcode::Str) return ins.bytes;
        return std::nullopt;
    };
    if (i + 1 >= n || cb.instructions[i + 1].op != Opcode::Iffail) return false;
    auto first = unit_bytes(i);
    if (!first) return false;
    std::int32_t fail_target = cb.target_of(cb.instructions[i + 1].label);
    std::string s = *first;
    std::size_t end = i + 2;
    std::size_t units = 1;
    while (end + 1 < n && !targeted[end] && !targeted[end + 1]) {
        auto more = unit_bytes(end);
        if (!more) break;
        if (cb.instructions[end + 1].op != Opcode::Iffail) break;
        if (cb.target_of(cb.instructions[end + 1].label) != fail_target) break;
        s += *more;
        end += 2;
        ++units;
    }
    if (units < 2) return false;
    if (fail_target > static_cast<std::int32_t>(i) &&
        fail_target < static_cast<std::int32_t>(end))
        return false;  // the fail handler sits inside the run
    LabelId fail_label = cb.instructions[i + 1].label;
    out = splice(cb, i, end,
                 {AbstractInstruction::with_bytes(Opcode::Str, s),
                  AbstractInstruction::with_label(Opcode::Iffail, fail_label)});
    return true;
}

// Attempts one close position of a candidate chain: the unit at `lex`
// becomes the chain's last alternative, the region ends right after its
// iffail (plus any trailing join nops). The probe harness is the arbiter:
// the rewrite happens only if the region provably tests a single byte.
inline bool close_class_chain(const CodeBlock& cb, std::size_t i, std::size_t lex,
                              bool keep_push, CodeBlock& out) {
    const std::size_t n = cb.instructions.size();
    std::size_t b = lex + 2;
    while (b < n && cb.instructions[b].op == Opcode::Nop) ++b;
    LabelId fail_label = cb.instructions[lex + 1].label;
    std::int32_t fail_target = cb.target_of(fail_label);
    if (fail_target >= static_cast<std::int32_t>(i) && fail_target < static_cast<std::int32_t>(b))
        return false;
    if (interior_entered_from_outside(cb, i, b)) return false;
    for (std::size_t k = i; k < b; ++k)
        if (!probe_safe_op(cb.instructions[k])) return false;
    // Join jumps must leave through the trailing nops or the region end.
    for (std::size_t k = i; k < b; ++k) {
        if (cb.instructions[k].op != Opcode::Jump) continue;
        std::int32_t t = cb.target_of(cb.instructions[k].label);
        if (t < static_cast<std::int32_t>(lex + 2) || t > static_cast<std::int32_t>(b))
            return false;
    }
    if (!input_blind_after_consume(cb, i, b)) return false;
    std::size_t exit_sp = keep_push ? 1 : 0;
    auto members = probe_single_byte_test(cb, i, i, b, b,
                                          static_cast<std::size_t>(fail_target), 0, exit_sp);
    if (!members || members->count() < 2) return false;
    std::vector<AbstractInstruction> repl;
    if (keep_push) repl.push_back(AbstractInstruction::simple(Opcode::Push));
    repl.push_back(AbstractInstruction::with_bitmap(Opcode::Cmap, *members));
    repl.push_back(AbstractInstruction::with_label(Opcode::Iffail, fail_label));
    out = splice(cb, i, b, std::move(repl));
    return true;
}

// Matches the compiled shape of a prioritized choice whose alternatives each
// test a single byte (chars or already-fused cmaps) and collapses the region
// to `cmap; iffail L`. The shape parser tolerates what the flow and peephole
// passes leave behind. Where the chain ends is ambiguous (the enclosing
// construct's code can mimic a unit frame), so every plausible close is
// tried longest-first and the probe harness decides.
inline bool try_fuse_class_chain(const CodeBlock& cb, const std::vector<bool>& targeted,
                                 std::size_t i, CodeBlock& out) {
    const std::size_t n = cb.instructions.size();
    if (cb.instructions[i].op != Opcode::Push) return false;
    (void)targeted;
    auto is_lex = [&](std::size_t k) {
        return cb.instructions[k].op == Opcode::Char || cb.instructions[k].op == Opcode::Cmap;
    };
    // Greedy walk over framed units; every unit is also a potential close.
    // The walk may run past the real chain into code that happens to mimic a
    // unit, so each close position checks only its own prefix.
    std::vector<std::size_t> units;   // lex index per unit
    std::vector<bool> unit_shared;    // frame style of each framed unit
    std::size_t j = i + 1;
    while (j + 1 < n && is_lex(j) && cb.instructions[j + 1].op == Opcode::Iffail) {
        units.push_back(j);
        std::int32_t x = cb.target_of(cb.instructions[j + 1].label);
        std::size_t h;
        bool us;
        if (j + 3 < n && cb.instructions[j + 2].op == Opcode::Pop &&
            cb.instructions[j + 3].op == Opcode::Jump && x == static_cast<std::int32_t>(j + 4)) {
            h = j + 4;
            us = false;
        } else if (j + 2 < n && cb.instructions[j + 2].op == Opcode::Jump &&
                   x == static_cast<std::int32_t>(j + 3)) {
            h = j + 3;
            us = true;
        } else {
            break;  // this unit can only close the chain
        }
        std::size_t next;
        if (h + 1 < n && cb.instructions[h].op == Opcode::Peekpop &&
            cb.instructions[h + 1].op == Opcode::Succ) {
            next = h + 2;
        } else if (h + 1 < n && cb.instructions[h].op == Opcode::Peek &&
                   cb.instructions[h + 1].op == Opcode::Succ) {
            next = h + 2;
        } else if (h + 2 < n && cb.instructions[h].op == Opcode::Peek &&
                   cb.instructions[h + 1].op == Opcode::Pop &&
                   cb.instructions[h + 2].op == Opcode::Succ) {
            next = h + 3;
        } else {
            break;
        }
        unit_shared.push_back(us);
        j = next;
        // unoptimized chains keep each alternative's own save
        if (j < n && cb.instructions[j].op == Opcode::Push && j + 1 < n && is_lex(j + 1))
            ++j;
    }
    if (units.size() < 2) return false;
    for (std::size_t t = units.size(); t >= 2; --t) {
        bool sh = unit_shared[0];
        bool uniform = true;
        for (std::size_t m = 0; m + 1 < t; ++m)
            if (unit_shared[m] != sh) { uniform = false; break; }
        if (!uniform) continue;
        if (close_class_chain(cb, i, units[t - 1], sh, out)) return true;
    }
    return false;
}

} // namespace detail

inline CodeBlock lexical_pass(CodeBlock cb) {
    for (;;) {
        bool changed = false;
        std::vector<bool> targeted = cb.referenced_targets();
        CodeBlock next;
        for (std::size_t i = 0; i + 1 < cb.instructions.size(); ++i) {
            if (detail::try_fuse_char_run(cb, targeted, i, next) ||
                detail::try_fuse_class_chain(cb, targeted, i, next)) {
                cb = std::move(next);
                changed = true;
                break;
            }
        }
        if (!changed) break;
    }
    return cb;
}

// ---------------------------------------------------------------------------
// Unary specialization: the implemented Table rows are not-char, not-str,
// option-str, option-cmap and repetition-cmap. The remaining combinations
// keep their generic skeletons.
// ---------------------------------------------------------------------------

namespace detail {

inline std::optional<AbstractInstruction> not_form(const AbstractInstruction& lex) {
    if (lex.op == Opcode::Char) return AbstractInstruction::with_byte(Opcode::Nchar, lex.byte);
    if (lex.op == Opcode::Str) return AbstractInstruction::with_bytes(Opcode::Nstr, lex.bytes);
    return std::nullopt;  // ncmap is not implemented
}

inline std::optional<AbstractInstruction> option_form(const AbstractInstruction& lex) {
    if (lex.op == Opcode::Str) return AbstractInstruction::with_bytes(Opcode::Ostr, lex.bytes);
    if (lex.op == Opcode::Cmap) return AbstractInstruction::with_bitmap(Opcode::Ocmap, lex.bitmap);
    return std::nullopt;  // ochar is not implemented
}

// Negation skeletons around one lexical instruction. Three shapes survive
// the earlier passes; the first two are self-contained, the third shares its
// position save with the surrounding code and keeps the push.
inline bool try_not_skeleton(const CodeBlock& cb, const std::vector<bool>& targeted,
                             std::size_t i, CodeBlock& out) {
    const std::size_t n = cb.instructions.size();
    if (cb.instructions[i].op != Opcode::Push) return false;
    if (i + 3 >= n) return false;
    auto specialized = not_form(cb.instructions[i + 1]);
    if (!specialized) return false;
    if (cb.instructions[i + 2].op != Opcode::Iffail) return false;
    auto op_at = [&](std::size_t k) { return cb.instructions[k].op; };
    auto check = [&](std::size_t b, std::int32_t handler,
                     std::initializer_list<Opcode> tail) {
        if (b > n) return false;
        std::size_t k = i + 3;
        for (Opcode want : tail)
            if (k >= b || op_at(k++) != want) return false;
        if (k != b) return false;
        if (cb.target_of(cb.instructions[i + 2].label) != handler) return false;
        for (std::size_t t = i + 1; t < b; ++t)
            if (targeted[t] && static_cast<std::int32_t>(t) != handler) return false;
        if (interior_entered_from_outside(cb, i, b)) return false;
        return true;
    };

    // push; lex; iffail X; peek; pop; fail; jump LF; X: peek; pop; succ
    if (i + 10 <= n &&
        check(i + 10, static_cast<std::int32_t>(i + 7),
              {Opcode::Peek, Opcode::Pop, Opcode::Fail, Opcode::Jump, Opcode::Peek,
               Opcode::Pop, Opcode::Succ})) {
        LabelId lf = cb.instructions[i + 6].label;
        std::int32_t lf_target = cb.target_of(lf);
        if (lf_target < static_cast<std::int32_t>(i) ||
            lf_target >= static_cast<std::int32_t>(i + 10)) {
            out = splice(cb, i, i + 10,
                         {*specialized, AbstractInstruction::with_label(Opcode::Iffail, lf)});
            return true;
        }
    }
    // push; lex; iffail X; peekpop; fail; jump LF; X: peekpop; succ
    if (i + 8 <= n &&
        check(i + 8, static_cast<std::int32_t>(i + 6),
              {Opcode::Peekpop, Opcode::Fail, Opcode::Jump, Opcode::Peekpop, Opcode::Succ})) {
        LabelId lf = cb.instructions[i + 5].label;
        std::int32_t lf_target = cb.target_of(lf);
        if (lf_target < static_cast<std::int32_t>(i) ||
            lf_target >= static_cast<std::int32_t>(i + 8)) {
            out = splice(cb, i, i + 8,
                         {*specialized, AbstractInstruction::with_label(Opcode::Iffail, lf)});
            return true;
        }
    }
    // push; lex; iffail X; peek; fail; jump LF; X: peek; succ   (shared save)
    if (i + 8 <= n &&
        check(i + 8, static_cast<std::int32_t>(i + 6),
              {Opcode::Peek, Opcode::Fail, Opcode::Jump, Opcode::Peek, Opcode::Succ})) {
        LabelId lf = cb.instructions[i + 5].label;
        std::int32_t lf_target = cb.target_of(lf);
        if (lf_target < static_cast<std::int32_t>(i) ||
            lf_target >= static_cast<std::int32_t>(i + 8)) {
            out = splice(cb, i, i + 8,
                         {AbstractInstruction::simple(Opcode::Push), *specialized,
                          AbstractInstruction::with_label(Opcode::Iffail, lf)});
            return true;
        }
    }
    return false;
}

// Option skeletons around one lexical instruction.
inline bool try_option_skeleton(const CodeBlock& cb, const std::vector<bool>& targeted,
                                std::size_t i, CodeBlock& out) {
    const std::size_t n = cb.instructions.size();
    if (cb.instructions[i].op != Opcode::Push) return false;
    if (i + 5 > n) return false;
    auto specialized = option_form(cb.instructions[i + 1]);
    if (!specialized) return false;
    if (i + 5 > n || cb.instructions[i + 2].op != Opcode::Iffail ||
        cb.instructions[i + 3].op != Opcode::Pop || cb.instructions[i + 4].op != Opcode::Jump)
        return false;
    if (cb.target_of(cb.instructions[i + 2].label) != static_cast<std::int32_t>(i + 5))
        return false;
    std::size_t b;
    if (i + 7 <= n && cb.instructions[i + 5].op == Opcode::Peekpop &&
        cb.instructions[i + 6].op == Opcode::Succ) {
        b = i + 7;
    } else if (i + 8 <= n && cb.instructions[i + 5].op == Opcode::Peek &&
               cb.instructions[i + 6].op == Opcode::Pop &&
               cb.instructions[i + 7].op == Opcode::Succ) {
        b = i + 8;
    } else {
        return false;
    }
    std::size_t join = b;
    if (b < n && cb.instructions[b].op == Opcode::Nop && targeted[b]) ++b;
    std::int32_t e = cb.target_of(cb.instructions[i + 4].label);
    if (e < static_cast<std::int32_t>(join) || e > static_cast<std::int32_t>(b)) return false;
    for (std::size_t t = i + 1; t < b; ++t)
        if (targeted[t] && t != i + 5 && t != join) return false;
    if (interior_entered_from_outside(cb, i, b)) return false;
    out = splice(cb, i, b, {*specialized});
    return true;
}

// Repetition skeleton: L1: push; BODY; pop; jump L1; exit handler. When the
// body is a probe-verified one-byte set test, the whole loop is a maximal
// run over that set. A body that is literally a single char keeps the
// generic code (rchar is not implemented); everything else qualifying gets
// rcmap, which also covers loops of the (!x .) form over the complement set.
inline bool try_repetition_skeleton(const CodeBlock& cb, const std::vector<bool>& targeted,
                                    std::size_t i, CodeBlock& out) {
    const std::size_t n = cb.instructions.size();
    if (cb.instructions[i].op != Opcode::Push) return false;
    // locate `pop; jump -> i` closing the loop
    std::size_t j = i + 1;
    std::size_t body_end = 0;
    for (; j + 1 < n; ++j) {
        if (cb.instructions[j].op == Opcode::Pop && cb.instructions[j + 1].op == Opcode::Jump &&
            cb.target_of(cb.instructions[j + 1].label) == static_cast<std::int32_t>(i)) {
            body_end = j;
            break;
        }
    }
    if (body_end == 0 || body_end == i + 1) return false;
    std::size_t h = body_end + 2;  // loop exit handler
    std::size_t b;
    bool shared_save = false;
    if (h + 1 < n && cb.instructions[h].op == Opcode::Peekpop &&
        cb.instructions[h + 1].op == Opcode::Succ) {
        b = h + 2;
    } else if (h + 2 < n && cb.instructions[h].op == Opcode::Peek &&
               cb.instructions[h + 1].op == Opcode::Pop &&
               cb.instructions[h + 2].op == Opcode::Succ) {
        b = h + 3;
    } else if (h + 1 < n && cb.instructions[h].op == Opcode::Peek &&
               cb.instructions[h + 1].op == Opcode::Succ) {
        b = h + 2;
        shared_save = true;
    } else {
        return false;
    }
    // skeleton must be private: nothing outside the loop may enter it
    // mid-flight (body-internal branch targets are fine)
    (void)targeted;
    if (interior_entered_from_outside(cb, i, b)) return false;
    bool has_set_test = false;
    for (std::size_t k = i + 1; k < body_end; ++k) {
        if (!probe_safe_op(cb.instructions[k])) return false;
        if (cb.instructions[k].op == Opcode::Cmap || cb.instructions[k].op == Opcode::Nchar ||
            cb.instructions[k].op == Opcode::Char)
            has_set_test = true;
        if (arg_kind_of(cb.instructions[k].op) == ArgKind::Label) {
            std::int32_t t = cb.target_of(cb.instructions[k].label);
            bool internal = t > static_cast<std::int32_t>(i) &&
                            t < static_cast<std::int32_t>(body_end);
            if (!internal && t != static_cast<std::int32_t>(h) &&
                t != static_cast<std::int32_t>(body_end))
                return false;
        }
    }
    if (!has_set_test) return false;  // rchar/rstr and plain .* stay generic
    if (!input_blind_after_consume(cb, i + 1, body_end)) return false;
    auto members = probe_single_byte_test(cb, i + 1, i + 1, body_end, body_end, h, 1, 1);
    if (!members || members->count() < 2) return false;
    std::vector<AbstractInstruction> repl{
        AbstractInstruction::with_bitmap(Opcode::Rcmap, *members)};
    if (shared_save) repl.push_back(AbstractInstruction::simple(Opcode::Push));
    out = splice(cb, i, b, std::move(repl));
    return true;
}

} // namespace detail

inline CodeBlock unary_pass(CodeBlock cb) {
    for (;;) {
        bool changed = false;
        std::vector<bool> targeted = cb.referenced_targets();
        CodeBlock next;
        for (std::size_t i = 0; i < cb.instructions.size(); ++i) {
            if (cb.instructions[i].op != Opcode::Push) continue;
            if (detail::try_not_skeleton(cb, targeted, i, next) ||
                detail::try_option_skeleton(cb, targeted, i, next) ||
                detail::try_repetition_skeleton(cb, targeted, i, next)) {
                cb = std::move(next);
                changed = true;
                break;
            }
        }
        if (!changed) break;
    }
    return cb;
}

// ---------------------------------------------------------------------------

inline CodeBlock compile_with_passes(const Grammar& g, const OptimizationConfig& cfg) {
    CodeBlock cb = cfg.inlining ? compile_grammar(inline_pass(g)) : compile_grammar(g);
    if (cfg.flow) cb = flow_pass(std::move(cb));
    if (cfg.peephole) cb = peephole_pass(std::move(cb));
    if (cfg.lexical) cb = lexical_pass(std::move(cb));
    if (cfg.unary) cb = unary_pass(std::move(cb));
    return cb;
}

} // namespace pegvm

// pegvm - PEG bytecode compiler and parsing virtual machine
#pragma once

#include <chrono>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pegvm/bytecode.hpp"
#include "pegvm/grammar.hpp"
#include "pegvm/optimizer.hpp"
#include "pegvm/vm.hpp"

namespace pegvm {

class io_error : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const void* data, std::size_t size) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot write '" + path + "'");
    f.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!f) throw io_error("write to '" + path + "' failed");
}

// --opt=none|all|<comma list of inline,flow,peephole,lex,unary>
inline OptimizationConfig opt_from_spec(const std::string& spec) {
    if (spec.empty() || spec == "all") return OptimizationConfig::all();
    if (spec == "none") return OptimizationConfig::none();
    OptimizationConfig cfg = OptimizationConfig::none();
    std::size_t pos = 0;
    while (pos <= spec.size()) {
        std::size_t comma = spec.find(',', pos);
        std::string name = spec.substr(pos, comma == std::string::npos ? comma : comma - pos);
        if (name == "inline") cfg.inlining = true;
        else if (name == "flow") cfg.flow = true;
        else if (name == "peephole") cfg.peephole = true;
        else if (name == "lex" || name == "lexical") cfg.lexical = true;
        else if (name == "unary") cfg.unary = true;
        else throw std::runtime_error("unknown optimization '" + name + "'");
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return cfg;
}

// Code-section bytes at each cumulative point of the pass pipeline, in the
// order the passes run.
struct SizeBreakdown {
    std::size_t plain = 0;
    std::size_t after_inline = 0;
    std::size_t after_flow = 0;
    std::size_t after_peephole = 0;
    std::size_t after_lexical = 0;
    std::size_t after_unary = 0;
};

inline SizeBreakdown cumulative_sizes(const Grammar& g) {
    SizeBreakdown out;
    out.plain = compile_grammar(g).code_section_bytes();
    Grammar gi = inline_pass(g);
    CodeBlock cb = compile_grammar(gi);
    out.after_inline = cb.code_section_bytes();
    cb = flow_pass(std::move(cb));
    out.after_flow = cb.code_section_bytes();
    cb = peephole_pass(std::move(cb));
    out.after_peephole = cb.code_section_bytes();
    cb = lexical_pass(std::move(cb));
    out.after_lexical = cb.code_section_bytes();
    cb = unary_pass(std::move(cb));
    out.after_unary = cb.code_section_bytes();
    return out;
}

// Parses and validates grammar text; throws with a readable message listing
// the diagnostics when the grammar is not compilable.
inline Grammar load_grammar(const std::string& text) {
    Grammar g = parse_grammar(text);
    auto diags = validate_grammar(g);
    if (!diags.empty()) {
        std::string msg = "grammar is not compilable:";
        for (const auto& d : diags) msg += "\n  " + diagnostic_to_string(d);
        throw std::runtime_error(msg);
    }
    return g;
}

struct BenchResult {
    std::size_t input_bytes = 0;
    int runs = 0;
    double mean_ms = 0.0;
    double throughput_bps = 0.0;
    bool matched = false;
};

// Compiles with all passes, then times `runs` executions and reports the
// mean. The first (untimed) run warms caches.
inline BenchResult bench(const Grammar& g, std::string_view input, int runs,
                         RunConfig rc = {}) {
    Program p = link(compile_with_passes(g, OptimizationConfig::all()));
    BenchResult out;
    out.input_bytes = input.size();
    out.runs = runs;
    auto warm = run(p, input, rc);
    out.matched = warm.matched;
    double total_ms = 0.0;
    for (int i = 0; i < runs; ++i) {
        auto t0 = std::chrono::steady_clock::now();
        auto r = run(p, input, rc);
        auto t1 = std::chrono::steady_clock::now();
        total_ms += std::chrono::duration<double, std::milli>(t1 - t0).count();
        out.matched = r.matched;
    }
    out.mean_ms = runs > 0 ? total_ms / runs : 0.0;
    out.throughput_bps = out.mean_ms > 0.0 ? input.size() / (out.mean_ms / 1000.0) : 0.0;
    return out;
}

} // namespace pegvm

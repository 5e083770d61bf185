// pegvm - PEG bytecode compiler and parsing virtual machine
//
// Subcommands:
//   compile <grammar.peg> [-o out.pvb] [--opt=...] [--dump-size] [--stats]
//   run     <image.pvb> <input> [--stack-slots N] [--stats]
//   dump    <image.pvb>
//   bench   <grammar.peg> <input> [-n runs]
//
// Exit codes: 0 match/success, 1 input did not match, 2 error.

#include <chrono>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "pegvm/driver.hpp"
#include "pegvm/pegvm.hpp"

using nlohmann::json;

namespace {

std::string path_stem(const std::string& path) {
    std::size_t slash = path.find_last_of("/\\");
    std::string name = slash == std::string::npos ? path : path.substr(slash + 1);
    std::size_t dot = name.find_last_of('.');
    return dot == std::string::npos ? name : name.substr(0, dot);
}

// One schema for every --stats emitter; fields that do not apply to the
// subcommand stay null so consumers can rely on the keys.
json stats_skeleton(const std::string& grammar_name) {
    return json{{"grammar", grammar_name},
                {"productions", nullptr},
                {"plain_code_bytes", nullptr},
                {"cumulative_code_bytes", nullptr},
                {"input_bytes", nullptr},
                {"matched", nullptr},
                {"consumed", nullptr},
                {"max_stack_slots", nullptr},
                {"max_stack_bytes", nullptr},
                {"steps", nullptr},
                {"wall_time_ms", nullptr}};
}

int cmd_compile(const std::string& grammar_path, std::string output_path,
                const std::string& opt_spec, bool dump_size, bool stats) {
    pegvm::Grammar g = pegvm::load_grammar(pegvm::read_file(grammar_path));
    pegvm::OptimizationConfig cfg = pegvm::opt_from_spec(opt_spec);
    pegvm::CodeBlock cb = pegvm::compile_with_passes(g, cfg);
    if (output_path.empty()) output_path = path_stem(grammar_path) + ".pvb";
    auto bytes = pegvm::encode(cb);
    pegvm::write_file(output_path, bytes.data(), bytes.size());
    if (dump_size) std::cout << cb.code_section_bytes() << "\n";
    if (stats) {
        auto sizes = pegvm::cumulative_sizes(g);
        json j = stats_skeleton(path_stem(grammar_path));
        j["productions"] = g.productions.size();
        j["plain_code_bytes"] = sizes.plain;
        j["cumulative_code_bytes"] = {{"inline", sizes.after_inline},
                                      {"flow", sizes.after_flow},
                                      {"peephole", sizes.after_peephole},
                                      {"lex", sizes.after_lexical},
                                      {"unary", sizes.after_unary}};
        std::cerr << j.dump() << "\n";
    }
    return 0;
}

int cmd_run(const std::string& image_path, const std::string& input_path,
            std::size_t stack_slots, bool stats) {
    auto image_bytes = pegvm::read_file(image_path);
    pegvm::Program p = pegvm::decode(
        std::vector<std::uint8_t>(image_bytes.begin(), image_bytes.end()));
    std::string input = pegvm::read_file(input_path);
    pegvm::RunConfig rc;
    rc.stack_slots = stack_slots;
    auto t0 = std::chrono::steady_clock::now();
    pegvm::ParseResult r = pegvm::run(p, input, rc);
    auto t1 = std::chrono::steady_clock::now();
    if (stats) {
        json j = stats_skeleton(path_stem(image_path));
        j["input_bytes"] = input.size();
        j["matched"] = r.matched;
        j["consumed"] = r.consumed;
        j["max_stack_slots"] = r.max_stack_depth;
        j["max_stack_bytes"] = r.max_stack_depth * 4;
        j["steps"] = r.steps;
        j["wall_time_ms"] = std::chrono::duration<double, std::milli>(t1 - t0).count();
        std::cerr << j.dump() << "\n";
    }
    if (r.error != pegvm::RunError::None) {
        const char* what = r.error == pegvm::RunError::StackOverflow  ? "STACK_OVERFLOW"
                           : r.error == pegvm::RunError::StackUnderflow ? "STACK_UNDERFLOW"
                           : r.error == pegvm::RunError::StepLimit      ? "STEP_LIMIT"
                                                                        : "BAD_PC";
        std::cerr << "run failed: " << what << "\n";
        return 2;
    }
    return r.matched ? 0 : 1;
}

int cmd_dump(const std::string& image_path) {
    auto image_bytes = pegvm::read_file(image_path);
    pegvm::Program p = pegvm::decode(
        std::vector<std::uint8_t>(image_bytes.begin(), image_bytes.end()));
    std::cout << pegvm::disassemble(p);
    return 0;
}

int cmd_bench(const std::string& grammar_path, const std::string& input_path, int runs) {
    pegvm::Grammar g = pegvm::load_grammar(pegvm::read_file(grammar_path));
    std::string input = pegvm::read_file(input_path);
    pegvm::BenchResult b = pegvm::bench(g, input, runs);
    json j{{"grammar", path_stem(grammar_path)},
           {"input_bytes", b.input_bytes},
           {"runs", b.runs},
           {"mean_ms", b.mean_ms},
           {"throughput_bps", b.throughput_bps},
           {"matched", b.matched}};
    std::cout << j.dump() << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"PEG bytecode compiler and parsing virtual machine"};
    app.require_subcommand(1);

    std::string grammar_path, image_path, input_path, output_path;
    std::string opt_spec = "all";
    bool dump_size = false, stats = false;
    std::size_t stack_slots = 512;
    int runs = 5;

    auto* compile = app.add_subcommand("compile", "compile a .peg grammar to bytecode");
    compile->add_option("grammar", grammar_path, "grammar file")->required();
    compile->add_option("-o,--output", output_path, "output .pvb path");
    compile->add_option("--opt", opt_spec, "none|all|comma list of inline,flow,peephole,lex,unary");
    compile->add_flag("--dump-size", dump_size, "print code-section bytes");
    compile->add_flag("--stats", stats, "emit per-pass size stats as JSON on stderr");

    auto* runc = app.add_subcommand("run", "run a bytecode image on an input file");
    runc->add_option("image", image_path, "bytecode .pvb file")->required();
    runc->add_option("input", input_path, "input file")->required();
    runc->add_option("--stack-slots", stack_slots, "stack capacity in slots");
    runc->add_flag("--stats", stats, "emit run stats as JSON on stderr");

    auto* dump = app.add_subcommand("dump", "disassemble a bytecode image");
    dump->add_option("image", image_path, "bytecode .pvb file")->required();

    auto* bench = app.add_subcommand("bench", "compile and time repeated runs");
    bench->add_option("grammar", grammar_path, "grammar file")->required();
    bench->add_option("input", input_path, "input file")->required();
    bench->add_option("-n,--runs", runs, "number of timed runs");

    CLI11_PARSE(app, argc, argv);

    try {
        if (compile->parsed())
            return cmd_compile(grammar_path, output_path, opt_spec, dump_size, stats);
        if (runc->parsed()) return cmd_run(image_path, input_path, stack_slots, stats);
        if (dump->parsed()) return cmd_dump(image_path);
        if (bench->parsed()) return cmd_bench(grammar_path, input_path, runs);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "test_support.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommandResult {
    int exit_code;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

fs::path work_dir() {
    static fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / "pegvm_cli_tests";
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

CommandResult run_cli(const std::string& args) {
    fs::path out = work_dir() / "stdout.txt";
    fs::path err = work_dir() / "stderr.txt";
    std::string cmd = std::string(testsupport::cli_path()) + " " + args + " >" +
                      out.string() + " 2>" + err.string();
    int status = std::system(cmd.c_str());
    int code = -1;
    if (status != -1) code = WEXITSTATUS(status);
    return {code, slurp(out), slurp(err)};
}

void write(const fs::path& p, const std::string& content) {
    std::ofstream f(p, std::ios::binary);
    f << content;
}

} // namespace

TEST_CASE("compile writes an image and reports its code size") {
    fs::path pvb = work_dir() / "csv.pvb";
    auto r = run_cli("compile " + testsupport::grammar_path("csv") + " -o " + pvb.string() +
                     " --opt=all --dump-size");
    REQUIRE(r.exit_code == 0);
    CHECK(std::stoul(r.out) > 0);
    REQUIRE(fs::exists(pvb));
    auto image = slurp(pvb);
    REQUIRE(image.size() >= 12);
    CHECK(image.substr(0, 4) == "PVM1");
}

TEST_CASE("compile rejects a grammar with an unresolved reference") {
    fs::path bad = work_dir() / "bad.peg";
    write(bad, "A = Missing 'x'\n");
    auto r = run_cli("compile " + bad.string() + " -o " + (work_dir() / "bad.pvb").string());
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("Missing") != std::string::npos);
}

TEST_CASE("optimized output is strictly smaller than plain") {
    auto plain = run_cli("compile " + testsupport::grammar_path("csv") + " -o " +
                         (work_dir() / "plain.pvb").string() + " --opt=none --dump-size");
    auto full = run_cli("compile " + testsupport::grammar_path("csv") + " -o " +
                        (work_dir() / "full.pvb").string() + " --opt=all --dump-size");
    REQUIRE(plain.exit_code == 0);
    REQUIRE(full.exit_code == 0);
    CHECK(std::stoul(full.out) < std::stoul(plain.out));
}

TEST_CASE("run exit codes distinguish match, mismatch and error") {
    fs::path csv_pvb = work_dir() / "run_csv.pvb";
    fs::path json_pvb = work_dir() / "run_json.pvb";
    REQUIRE(run_cli("compile " + testsupport::grammar_path("csv") + " -o " +
                    csv_pvb.string()).exit_code == 0);
    REQUIRE(run_cli("compile " + testsupport::grammar_path("json") + " -o " +
                    json_pvb.string()).exit_code == 0);

    fs::path data = work_dir() / "data.csv";
    write(data, "a,b,c\nd,e,f\n");
    CHECK(run_cli("run " + csv_pvb.string() + " " + data.string()).exit_code == 0);
    // a csv file is not a json document
    CHECK(run_cli("run " + json_pvb.string() + " " + data.string()).exit_code == 1);
    // missing file is an error
    CHECK(run_cli("run " + csv_pvb.string() + " " + (work_dir() / "nope.csv").string())
              .exit_code == 2);
    // a flat grammar parses fine on a tiny stack
    CHECK(run_cli("run " + csv_pvb.string() + " " + data.string() + " --stack-slots 8")
              .exit_code == 0);
}

TEST_CASE("deep recursion with a tiny stack reports an error exit") {
    fs::path rec = work_dir() / "rec.peg";
    write(rec, "A = 'a' A / ''\n");
    fs::path pvb = work_dir() / "rec.pvb";
    REQUIRE(run_cli("compile " + rec.string() + " -o " + pvb.string()).exit_code == 0);
    fs::path in = work_dir() / "rec.txt";
    write(in, std::string(100, 'a'));
    CHECK(run_cli("run " + pvb.string() + " " + in.string()).exit_code == 0);
    auto r = run_cli("run " + pvb.string() + " " + in.string() + " --stack-slots 8");
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("STACK_OVERFLOW") != std::string::npos);
}

TEST_CASE("run --stats emits schema-stable json on stderr") {
    fs::path pvb = work_dir() / "stats_csv.pvb";
    REQUIRE(run_cli("compile " + testsupport::grammar_path("csv") + " -o " +
                    pvb.string()).exit_code == 0);
    fs::path data = work_dir() / "stats.csv";
    write(data, "a,b\n");
    auto r = run_cli("run " + pvb.string() + " " + data.string() + " --stats");
    REQUIRE(r.exit_code == 0);
    json j = json::parse(r.err);
    for (const char* key : {"grammar", "productions", "plain_code_bytes",
                            "cumulative_code_bytes", "input_bytes", "matched", "consumed",
                            "max_stack_slots", "max_stack_bytes", "steps", "wall_time_ms"})
        REQUIRE(j.contains(key));
    CHECK(j["matched"].get<bool>());
    CHECK(j["consumed"].get<std::size_t>() == 4);
    CHECK(j["max_stack_bytes"].get<std::size_t>() ==
          4 * j["max_stack_slots"].get<std::size_t>());
    CHECK(j["input_bytes"].get<std::size_t>() == 4);
}

TEST_CASE("compile --stats reports cumulative pass sizes") {
    auto r = run_cli("compile " + testsupport::grammar_path("syslog") + " -o " +
                     (work_dir() / "sys.pvb").string() + " --stats");
    REQUIRE(r.exit_code == 0);
    json j = json::parse(r.err);
    auto plain = j["plain_code_bytes"].get<std::size_t>();
    auto cum = j["cumulative_code_bytes"];
    std::size_t prev = plain;
    for (const char* key : {"inline", "flow", "peephole", "lex", "unary"}) {
        auto v = cum[key].get<std::size_t>();
        CHECK(v <= prev);
        prev = v;
    }
    CHECK(j["productions"].get<std::size_t>() == 10);
}

TEST_CASE("dump output matches the golden disassemblies") {
    for (const char* name : {"csv", "json", "xml"}) {
        fs::path pvb = work_dir() / (std::string("golden_") + name + ".pvb");
        REQUIRE(run_cli("compile " + testsupport::grammar_path(name) + " -o " + pvb.string() +
                        " --opt=all").exit_code == 0);
        auto r = run_cli("dump " + pvb.string());
        REQUIRE(r.exit_code == 0);
        std::string golden =
            slurp(testsupport::source_dir() + "/tests/golden/" + name + ".dis");
        REQUIRE_FALSE(golden.empty());
        CHECK(r.out == golden);
    }
}

TEST_CASE("dump rejects a corrupt image") {
    fs::path bogus = work_dir() / "bogus.pvb";
    write(bogus, "XXXXnotanimage");
    CHECK(run_cli("dump " + bogus.string()).exit_code == 2);
}

TEST_CASE("bench reports throughput as json") {
    fs::path data = work_dir() / "bench.csv";
    std::mt19937 rng(3);
    write(data, testsupport::gen_csv(rng, 2000));
    auto r = run_cli("bench " + testsupport::grammar_path("csv") + " " + data.string() +
                     " -n 3");
    REQUIRE(r.exit_code == 0);
    json j = json::parse(r.out);
    CHECK(j["runs"].get<int>() == 3);
    CHECK(j["throughput_bps"].get<double>() > 0.0);
    CHECK(j["matched"].get<bool>());
    // a single measurement is allowed too
    auto r1 = run_cli("bench " + testsupport::grammar_path("csv") + " " + data.string() +
                      " -n 1");
    REQUIRE(r1.exit_code == 0);
    CHECK(json::parse(r1.out)["runs"].get<int>() == 1);
}

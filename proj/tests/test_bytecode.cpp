#include <catch2/catch_amalgamated.hpp>

#include "pegvm/bytecode.hpp"
#include "pegvm/compiler.hpp"
#include "test_support.hpp"

using namespace pegvm;

namespace {

// Builds the 5-instruction program [call +2; exit; char 'a'; iffail +1; ret]
// used for the hand-checked encoding.
CodeBlock tiny_program() {
    Grammar g = parse_grammar("A = 'a'");
    return compile_grammar(g);
}

CodeBlock random_block(std::mt19937& rng) {
    std::uniform_int_distribution<int> opd(0, kOpcodeCount - 1), byted(0, 255), lend(1, 6),
        coin(0, 1);
    CodeEmitter em;
    int n = 3 + static_cast<int>(rng() % 60);
    // allocate labels first so branches can point anywhere in range
    std::vector<LabelId> labels;
    for (int i = 0; i < 4; ++i) labels.push_back(em.new_label());
    for (int i = 0; i < n; ++i) {
        Opcode op = static_cast<Opcode>(opd(rng));
        switch (arg_kind_of(op)) {
        case ArgKind::Byte:
            em.emit(AbstractInstruction::with_byte(op, static_cast<std::uint8_t>(byted(rng))));
            break;
        case ArgKind::Bytes: {
            std::string s;
            int l = lend(rng);
            for (int j = 0; j < l; ++j) s.push_back(static_cast<char>('a' + rng() % 4));
            em.emit(AbstractInstruction::with_bytes(op, s));
            break;
        }
        case ArgKind::Bitmap: {
            ByteSet m;
            m.set(rng() % 256);
            if (coin(rng)) m.set(rng() % 256);
            em.emit(AbstractInstruction::with_bitmap(op, m));
            break;
        }
        case ArgKind::Label:
            em.emit(AbstractInstruction::with_label(op, labels[rng() % labels.size()]));
            break;
        case ArgKind::ProductionName:
            em.emit(AbstractInstruction::call("Start"));
            break;
        case ArgKind::None:
            em.emit(op);
            break;
        }
    }
    CodeBlock cb = em.take();
    // bind the labels inside the emitted range
    for (LabelId l : labels)
        cb.labels[static_cast<std::size_t>(l)] =
            static_cast<std::int32_t>(rng() % cb.instructions.size());
    LabelId entry = static_cast<LabelId>(cb.labels.size());
    cb.labels.push_back(0);
    cb.entries.push_back({"Start", entry});
    cb.start = "Start";
    return cb;
}

} // namespace

TEST_CASE("hand-checked encoding of the five-instruction program") {
    auto bytes = encode(tiny_program());
    REQUIRE(bytes.size() == 12 + 10);
    const std::uint8_t expect[] = {
        'P', 'V', 'M', '1',
        5, 0,        // instruction count
        0, 0,        // string pool
        0, 0,        // bitmap pool
        0, 0,        // start index
        0x02, 0x38,  // call +2
        0x00, 0xa0,  // exit
        0x61, 0x18,  // char 'a'
        0x01, 0x30,  // iffail +1
        0x00, 0x40,  // ret
    };
    REQUIRE(bytes.size() == sizeof expect);
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        INFO("byte " << i);
        CHECK(bytes[i] == expect[i]);
    }
}

TEST_CASE("image size follows the formula exactly") {
    CodeEmitter em;
    em.emit(AbstractInstruction::with_bytes(Opcode::Str, "Jan"));
    em.emit(AbstractInstruction::with_bytes(Opcode::Ostr, "Feb"));
    ByteSet m;
    m.set('0');
    em.emit(AbstractInstruction::with_bitmap(Opcode::Cmap, m));
    em.emit(Opcode::Ret);
    CodeBlock cb = em.take();
    auto bytes = encode(cb);
    CHECK(bytes.size() == 12 + 2 * 4 + (1 + 3) + (1 + 3) + 32 * 1);
}

TEST_CASE("identical pool entries are shared") {
    CodeEmitter em;
    em.emit(AbstractInstruction::with_bytes(Opcode::Str, "Jan"));
    em.emit(AbstractInstruction::with_bytes(Opcode::Str, "Jan"));
    ByteSet m;
    m.set('q');
    em.emit(AbstractInstruction::with_bitmap(Opcode::Cmap, m));
    em.emit(AbstractInstruction::with_bitmap(Opcode::Rcmap, m));
    em.emit(Opcode::Ret);
    auto p = link(em.take());
    REQUIRE(p.strings.size() == 1);
    CHECK(p.code[0].arg == p.code[1].arg);
    REQUIRE(p.bitmaps.size() == 1);
    CHECK(p.code[2].arg == p.code[3].arg);
}

TEST_CASE("no two pool entries are byte-identical in corpus images") {
    for (const auto& name : testsupport::corpus_names()) {
        Grammar g = testsupport::load_corpus(name);
        Program p = link(compile_with_passes(g, OptimizationConfig::all()));
        for (std::size_t a = 0; a < p.strings.size(); ++a)
            for (std::size_t b = a + 1; b < p.strings.size(); ++b)
                CHECK(p.strings[a] != p.strings[b]);
        for (std::size_t a = 0; a < p.bitmaps.size(); ++a)
            for (std::size_t b = a + 1; b < p.bitmaps.size(); ++b)
                CHECK(p.bitmaps[a] != p.bitmaps[b]);
    }
}

TEST_CASE("decode rejects structural corruption") {
    auto bytes = encode(tiny_program());

    SECTION("bad magic") {
        auto bad = bytes;
        bad[0] = 'X';
        try {
            decode(bad);
            FAIL("expected decode_error");
        } catch (const decode_error& e) {
            CHECK(e.kind() == DecodeErrorKind::Magic);
        }
    }
    SECTION("bad version") {
        auto bad = bytes;
        bad[3] = '2';
        try {
            decode(bad);
            FAIL("expected decode_error");
        } catch (const decode_error& e) {
            CHECK(e.kind() == DecodeErrorKind::Version);
        }
    }
    SECTION("truncated code section") {
        auto bad = bytes;
        bad.resize(bytes.size() - 3);
        try {
            decode(bad);
            FAIL("expected decode_error");
        } catch (const decode_error& e) {
            CHECK(e.kind() == DecodeErrorKind::Truncated);
        }
    }
    SECTION("opcode out of range") {
        auto bad = bytes;
        bad[13] = 31 << 3;  // opcode bits of the first word
        try {
            decode(bad);
            FAIL("expected decode_error");
        } catch (const decode_error& e) {
            CHECK(e.kind() == DecodeErrorKind::BadOpcode);
            CHECK(e.index() == 0);
        }
    }
    SECTION("branch target out of bounds") {
        auto bad = bytes;
        bad[12] = 0x7f;  // call offset far beyond the code
        bad[13] = 0x3b;
        try {
            decode(bad);
            FAIL("expected decode_error");
        } catch (const decode_error& e) {
            CHECK(e.kind() == DecodeErrorKind::BadTarget);
        }
    }
    SECTION("pool index out of bounds") {
        CodeEmitter em;
        em.emit(AbstractInstruction::with_bytes(Opcode::Str, "x"));
        em.emit(Opcode::Ret);
        auto img = encode(em.take());
        img[6] = 0;  // claim zero strings but keep the str instruction
        img.resize(12 + 4);
        try {
            decode(img);
            FAIL("expected decode_error");
        } catch (const decode_error& e) {
            CHECK(e.kind() == DecodeErrorKind::BadPoolIndex);
        }
    }
}

TEST_CASE("jump offsets beyond eleven bits are an encode error") {
    CodeEmitter em;
    LabelId far = em.new_label();
    em.emit(AbstractInstruction::with_label(Opcode::Jump, far));
    for (int i = 0; i < 1100; ++i) em.emit(Opcode::Nop);
    em.bind(far);
    em.emit(Opcode::Ret);
    CodeBlock cb = em.take();
    try {
        encode(cb);
        FAIL("expected encode_error");
    } catch (const encode_error& e) {
        CHECK(e.kind() == EncodeErrorKind::JumpRange);
    }
}

TEST_CASE("oversized strings are an encode error") {
    CodeEmitter em;
    em.emit(AbstractInstruction::with_bytes(Opcode::Str, std::string(300, 'x')));
    em.emit(Opcode::Ret);
    try {
        encode(em.take());
        FAIL("expected encode_error");
    } catch (const encode_error& e) {
        CHECK(e.kind() == EncodeErrorKind::PoolOverflow);
    }
}

TEST_CASE("negative offsets survive the round trip") {
    CodeEmitter em;
    LabelId back = em.new_label();
    em.bind(back);
    em.emit(Opcode::Nop);
    em.emit(Opcode::Nop);
    em.emit(AbstractInstruction::with_label(Opcode::Jump, back));
    em.emit(Opcode::Ret);
    auto p = decode(encode(em.take()));
    CHECK(p.code[2].op == Opcode::Jump);
    CHECK(p.code[2].arg == 0);
}

TEST_CASE("encode/decode round-trip on 500 random blocks") {
    std::mt19937 rng(8080);
    for (int i = 0; i < 500; ++i) {
        CodeBlock cb = random_block(rng);
        Program want = link(cb);
        std::vector<std::uint8_t> bytes;
        try {
            bytes = encode(cb);
        } catch (const encode_error&) {
            continue;  // random labels can exceed the offset range; skip those
        }
        Program got = decode(bytes);
        REQUIRE(got.code.size() == want.code.size());
        for (std::size_t k = 0; k < want.code.size(); ++k) {
            CHECK(got.code[k].op == want.code[k].op);
            CHECK(got.code[k].arg == want.code[k].arg);
        }
        REQUIRE(got.strings == want.strings);
        REQUIRE(got.bitmaps.size() == want.bitmaps.size());
        for (std::size_t k = 0; k < want.bitmaps.size(); ++k)
            CHECK(got.bitmaps[k] == want.bitmaps[k]);
        CHECK(got.start == want.start);
    }
}

TEST_CASE("optimized corpus images round-trip") {
    for (const auto& name : testsupport::corpus_names()) {
        Grammar g = testsupport::load_corpus(name);
        CodeBlock cb = compile_with_passes(g, OptimizationConfig::all());
        Program want = link(cb);
        Program got = decode(encode(cb));
        REQUIRE(got.code.size() == want.code.size());
        for (std::size_t k = 0; k < want.code.size(); ++k) {
            CHECK(got.code[k].op == want.code[k].op);
            CHECK(got.code[k].arg == want.code[k].arg);
        }
    }
}

TEST_CASE("disassembly renders symbolically") {
    CodeEmitter em;
    em.emit(Opcode::Nop);
    em.emit(Opcode::Nop);
    em.emit(Opcode::Nop);
    em.emit(AbstractInstruction::with_byte(Opcode::Char, 'a'));
    ByteSet digits;
    for (char c = '0'; c <= '9'; ++c) digits.set(static_cast<unsigned char>(c));
    em.emit(AbstractInstruction::with_bitmap(Opcode::Cmap, digits));
    em.emit(AbstractInstruction::with_bytes(Opcode::Str, "Jan"));
    em.emit(AbstractInstruction::with_byte(Opcode::Nchar, '\n'));
    LabelId l = em.new_label();
    em.bind(l);
    em.emit(AbstractInstruction::with_label(Opcode::Jump, l));
    em.emit(Opcode::Ret);
    std::string text = disassemble(link(em.take()));
    CHECK(text.find("0003 char 'a'\n") != std::string::npos);
    CHECK(text.find("0004 cmap [0-9]\n") != std::string::npos);
    CHECK(text.find("0005 str \"Jan\"\n") != std::string::npos);
    CHECK(text.find("0006 nchar '\\n'\n") != std::string::npos);
    CHECK(text.find("0007 jump 0007\n") != std::string::npos);
    // one line per instruction
    CHECK(std::count(text.begin(), text.end(), '\n') == 9);
}

TEST_CASE("disassembly of a decoded image lists every instruction") {
    Grammar g = testsupport::load_corpus("csv");
    CodeBlock cb = compile_with_passes(g, OptimizationConfig::all());
    Program p = decode(encode(cb));
    std::string text = disassemble(p);
    CHECK(std::count(text.begin(), text.end(), '\n') ==
          static_cast<std::ptrdiff_t>(cb.instructions.size()));
}

// pegvm - PEG bytecode compiler and parsing virtual machine
#pragma once

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pegvm/code.hpp"

namespace pegvm {

// .pvb image layout, all integers little-endian:
//   offset 0   magic "PVM1" (the 4th byte doubles as the format version)
//   offset 4   u16 instruction count
//   offset 6   u16 string pool count
//   offset 8   u16 bitmap pool count
//   offset 10  u16 start instruction index
//   offset 12  code: count x 2-byte words, bits 15..11 opcode, 10..0 argument
//   then       string pool entries (u8 length, bytes), bitmap pool (32 bytes each)
// Jump, iffail and call arguments are signed 11-bit offsets relative to the
// branching instruction's own index.
inline constexpr char kMagic[4] = {'P', 'V', 'M', '1'};
inline constexpr std::size_t kHeaderSize = 12;
inline constexpr std::int32_t kMinJumpOffset = -1024;
inline constexpr std::int32_t kMaxJumpOffset = 1023;
inline constexpr std::uint32_t kMaxPoolIndex = 2047;
inline constexpr std::size_t kMaxStringLen = 255;

enum class EncodeErrorKind { JumpRange, PoolOverflow, TooLarge };
enum class DecodeErrorKind { Magic, Version, Truncated, BadOpcode, BadTarget, BadPoolIndex, BadArgument };

class encode_error : public std::runtime_error {
public:
    encode_error(EncodeErrorKind kind, const std::string& msg)
        : std::runtime_error(msg), kind_(kind) {}
    EncodeErrorKind kind() const noexcept { return kind_; }

private:
    EncodeErrorKind kind_;
};

class decode_error : public std::runtime_error {
public:
    decode_error(DecodeErrorKind kind, const std::string& msg, std::size_t index = 0)
        : std::runtime_error(msg), kind_(kind), index_(index) {}
    DecodeErrorKind kind() const noexcept { return kind_; }
    std::size_t index() const noexcept { return index_; }

private:
    DecodeErrorKind kind_;
    std::size_t index_;
};

// Executable form: branch targets resolved to absolute instruction indices,
// lexical arguments resolved through the side tables. Immutable once built;
// one Program may back any number of concurrent runs.
struct Program {
    struct Instruction {
        Opcode op;
        std::int32_t arg;  // absolute target, byte value, or pool index
    };
    std::vector<Instruction> code;
    std::vector<std::string> strings;
    std::vector<ByteSet> bitmaps;
    std::int32_t start = 0;
};

namespace detail {

struct PoolBuilder {
    std::vector<std::string> strings;
    std::vector<ByteSet> bitmaps;

    std::uint32_t intern(const std::string& s) {
        for (std::size_t i = 0; i < strings.size(); ++i)
            if (strings[i] == s) return static_cast<std::uint32_t>(i);
        strings.push_back(s);
        return static_cast<std::uint32_t>(strings.size() - 1);
    }
    std::uint32_t intern(const ByteSet& m) {
        for (std::size_t i = 0; i < bitmaps.size(); ++i)
            if (bitmaps[i] == m) return static_cast<std::uint32_t>(i);
        bitmaps.push_back(m);
        return static_cast<std::uint32_t>(bitmaps.size() - 1);
    }
};

} // namespace detail

// Resolves labels and production names to absolute instruction indices and
// interns the constant pools. No width limits apply here; encode() adds the
// 11-bit checks on top when producing the wire format.
inline Program link(const CodeBlock& cb) {
    Program p;
    detail::PoolBuilder pools;
    p.code.reserve(cb.instructions.size());
    for (const auto& ins : cb.instructions) {
        Program::Instruction out{ins.op, 0};
        switch (arg_kind_of(ins.op)) {
        case ArgKind::Byte:
            out.arg = ins.byte;
            break;
        case ArgKind::Bytes:
            out.arg = static_cast<std::int32_t>(pools.intern(ins.bytes));
            break;
        case ArgKind::Bitmap:
            out.arg = static_cast<std::int32_t>(pools.intern(ins.bitmap));
            break;
        case ArgKind::Label:
            out.arg = cb.target_of(ins.label);
            break;
        case ArgKind::ProductionName:
            out.arg = cb.entry_index(ins.bytes);
            break;
        case ArgKind::None:
            break;
        }
        p.code.push_back(out);
    }
    p.strings = std::move(pools.strings);
    p.bitmaps = std::move(pools.bitmaps);
    p.start = 0;
    return p;
}

namespace detail {

inline void put_u16(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
}

} // namespace detail

// Packs linked code into the fixed-width image. Identical strings and
// bitmaps share one pool entry. Image size is exactly
// 12 + 2*N + sum(1+len) + 32*M bytes.
inline std::vector<std::uint8_t> encode(const CodeBlock& cb) {
    Program p = link(cb);
    const std::size_t n = p.code.size();
    if (n > 0xffff)
        throw encode_error(EncodeErrorKind::TooLarge,
                           "instruction count " + std::to_string(n) + " exceeds 65535");
    if (p.strings.size() > kMaxPoolIndex + 1 || p.bitmaps.size() > kMaxPoolIndex + 1)
        throw encode_error(EncodeErrorKind::PoolOverflow, "constant pool exceeds 2048 entries");
    for (const auto& s : p.strings)
        if (s.size() > kMaxStringLen)
            throw encode_error(EncodeErrorKind::PoolOverflow,
                               "string literal of " + std::to_string(s.size()) + " bytes");

    std::vector<std::uint8_t> out;
    out.reserve(kHeaderSize + 2 * n);
    out.insert(out.end(), kMagic, kMagic + 4);
    detail::put_u16(out, static_cast<std::uint32_t>(n));
    detail::put_u16(out, static_cast<std::uint32_t>(p.strings.size()));
    detail::put_u16(out, static_cast<std::uint32_t>(p.bitmaps.size()));
    detail::put_u16(out, static_cast<std::uint32_t>(p.start));

    for (std::size_t i = 0; i < n; ++i) {
        const auto& ins = p.code[i];
        std::uint32_t arg = 0;
        switch (arg_kind_of(ins.op)) {
        case ArgKind::Label:
        case ArgKind::ProductionName: {
            std::int32_t off = ins.arg - static_cast<std::int32_t>(i);
            if (off < kMinJumpOffset || off > kMaxJumpOffset)
                throw encode_error(EncodeErrorKind::JumpRange,
                                   "branch offset " + std::to_string(off) +
                                       " at instruction " + std::to_string(i) +
                                       " outside [-1024, 1023]");
            arg = static_cast<std::uint32_t>(off) & 0x7ff;
            break;
        }
        default:
            arg = static_cast<std::uint32_t>(ins.arg);
            break;
        }
        std::uint32_t word = (static_cast<std::uint32_t>(ins.op) << 11) | (arg & 0x7ff);
        detail::put_u16(out, word);
    }
    for (const auto& s : p.strings) {
        out.push_back(static_cast<std::uint8_t>(s.size()));
        out.insert(out.end(), s.begin(), s.end());
    }
    for (const auto& m : p.bitmaps) {
        for (unsigned byte = 0; byte < 32; ++byte) {
            std::uint8_t b = 0;
            for (unsigned bit = 0; bit < 8; ++bit)
                if (m.test(byte * 8 + bit)) b |= static_cast<std::uint8_t>(1u << bit);
            out.push_back(b);
        }
    }
    return out;
}

// Validates the image structurally and produces an executable Program.
inline Program decode(const std::vector<std::uint8_t>& bytes) {
    auto need = [&](std::size_t at, std::size_t len) {
        if (at + len > bytes.size())
            throw decode_error(DecodeErrorKind::Truncated,
                               "image truncated at byte " + std::to_string(at));
    };
    need(0, kHeaderSize);
    if (bytes[0] != 'P' || bytes[1] != 'V' || bytes[2] != 'M')
        throw decode_error(DecodeErrorKind::Magic, "bad magic");
    if (bytes[3] != '1')
        throw decode_error(DecodeErrorKind::Version, "unsupported format version");
    auto get_u16 = [&](std::size_t at) {
        return static_cast<std::uint32_t>(bytes[at]) |
               (static_cast<std::uint32_t>(bytes[at + 1]) << 8);
    };
    const std::uint32_t n = get_u16(4);
    const std::uint32_t nstrings = get_u16(6);
    const std::uint32_t nbitmaps = get_u16(8);
    const std::uint32_t start = get_u16(10);

    Program p;
    p.code.reserve(n);
    std::size_t at = kHeaderSize;
    need(at, 2 * static_cast<std::size_t>(n));
    for (std::uint32_t i = 0; i < n; ++i, at += 2) {
        std::uint32_t word = get_u16(at);
        std::uint32_t opv = word >> 11;
        std::uint32_t arg = word & 0x7ff;
        if (opv >= kOpcodeCount)
            throw decode_error(DecodeErrorKind::BadOpcode,
                               "opcode " + std::to_string(opv) + " at instruction " +
                                   std::to_string(i), i);
        Program::Instruction ins{static_cast<Opcode>(opv), 0};
        switch (arg_kind_of(ins.op)) {
        case ArgKind::Label:
        case ArgKind::ProductionName: {
            std::int32_t off = static_cast<std::int32_t>(arg);
            if (off & 0x400) off -= 0x800;
            std::int32_t target = static_cast<std::int32_t>(i) + off;
            if (target < 0 || target >= static_cast<std::int32_t>(n))
                throw decode_error(DecodeErrorKind::BadTarget,
                                   "branch target " + std::to_string(target) +
                                       " at instruction " + std::to_string(i), i);
            ins.arg = target;
            break;
        }
        case ArgKind::Byte:
            if (arg > 0xff)
                throw decode_error(DecodeErrorKind::BadArgument,
                                   "byte argument " + std::to_string(arg) +
                                       " at instruction " + std::to_string(i), i);
            ins.arg = static_cast<std::int32_t>(arg);
            break;
        case ArgKind::Bytes:
            if (arg >= nstrings)
                throw decode_error(DecodeErrorKind::BadPoolIndex,
                                   "string index " + std::to_string(arg) +
                                       " at instruction " + std::to_string(i), i);
            ins.arg = static_cast<std::int32_t>(arg);
            break;
        case ArgKind::Bitmap:
            if (arg >= nbitmaps)
                throw decode_error(DecodeErrorKind::BadPoolIndex,
                                   "bitmap index " + std::to_string(arg) +
                                       " at instruction " + std::to_string(i), i);
            ins.arg = static_cast<std::int32_t>(arg);
            break;
        case ArgKind::None:
            ins.arg = 0;
            break;
        }
        p.code.push_back(ins);
    }
    for (std::uint32_t i = 0; i < nstrings; ++i) {
        need(at, 1);
        std::size_t len = bytes[at++];
        need(at, len);
        p.strings.emplace_back(reinterpret_cast<const char*>(bytes.data() + at), len);
        at += len;
    }
    for (std::uint32_t i = 0; i < nbitmaps; ++i) {
        need(at, 32);
        ByteSet m;
        for (unsigned byte = 0; byte < 32; ++byte)
            for (unsigned bit = 0; bit < 8; ++bit)
                if (bytes[at + byte] & (1u << bit)) m.set(byte * 8 + bit);
        at += 32;
        p.bitmaps.push_back(m);
    }
    if (n > 0 && start >= n)
        throw decode_error(DecodeErrorKind::BadTarget, "start index out of range", start);
    p.start = static_cast<std::int32_t>(start);
    return p;
}

namespace detail {

inline void disasm_char(std::string& out, std::uint8_t c) {
    out += '\'';
    append_escaped(out, c, "'");
    out += '\'';
}

inline void disasm_string(std::string& out, const std::string& s) {
    out += '"';
    for (char c : s) append_escaped(out, static_cast<std::uint8_t>(c), "\"");
    out += '"';
}

} // namespace detail

// One instruction per line: zero-padded index, mnemonic, argument rendered
// symbolically. Output is stable and used for golden-file comparisons.
inline std::string disassemble(const Program& p) {
    std::string out;
    char buf[16];
    for (std::size_t i = 0; i < p.code.size(); ++i) {
        const auto& ins = p.code[i];
        std::snprintf(buf, sizeof buf, "%04zu ", i);
        out += buf;
        out += opcode_name(ins.op);
        switch (arg_kind_of(ins.op)) {
        case ArgKind::Byte:
            out += ' ';
            detail::disasm_char(out, static_cast<std::uint8_t>(ins.arg));
            break;
        case ArgKind::Bytes:
            out += ' ';
            detail::disasm_string(out, p.strings[static_cast<std::size_t>(ins.arg)]);
            break;
        case ArgKind::Bitmap:
            out += ' ';
            out += detail::class_to_string(p.bitmaps[static_cast<std::size_t>(ins.arg)]);
            break;
        case ArgKind::Label:
        case ArgKind::ProductionName:
            std::snprintf(buf, sizeof buf, " %04d", ins.arg);
            out += buf;
            break;
        case ArgKind::None:
            break;
        }
        out += '\n';
    }
    return out;
}

} // namespace pegvm

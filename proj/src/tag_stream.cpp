#include "qdslab/tag_stream.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

namespace qdslab {

namespace {

constexpr std::array<char, 4> kMagic{'Q', 'T', 'A', 'G'};

template <typename T>
void put_le(char* dst, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        dst[i] = static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff);
    }
}

template <typename T>
T get_le(const char* src) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(src[i])) << (8 * i);
    }
    return static_cast<T>(v);
}

}  // namespace

std::vector<std::uint64_t> TagStream::channel_times(std::uint16_t channel) const {
    std::vector<std::uint64_t> out;
    for (const auto& r : records) {
        if (r.channel == channel) out.push_back(r.timestamp_ps);
    }
    return out;
}

void TagStream::validate() const {
    if (resolution_ps == 0) throw TagFormatError("resolution_ps must be positive");
    std::vector<std::uint64_t> last(channel_count, 0);
    std::vector<bool> seen(channel_count, false);
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        if (r.channel >= channel_count) {
            throw TagFormatError("record " + std::to_string(i) + ": channel " + std::to_string(r.channel) +
                                 " not in channel map");
        }
        if (seen[r.channel] && r.timestamp_ps < last[r.channel]) {
            throw TagFormatError("record " + std::to_string(i) + ": timestamp decreases on channel " +
                                 std::to_string(r.channel));
        }
        seen[r.channel] = true;
        last[r.channel] = r.timestamp_ps;
    }
}

void write_tag_stream(std::ostream& out, const TagStream& stream) {
    std::array<char, TagStream::kHeaderBytes> header{};
    std::memcpy(header.data(), kMagic.data(), kMagic.size());
    put_le<std::uint16_t>(header.data() + 4, TagStream::kVersion);
    put_le<std::uint16_t>(header.data() + 6, stream.user_id);
    put_le<std::uint32_t>(header.data() + 8, stream.channel_count);
    put_le<std::uint64_t>(header.data() + 12, stream.resolution_ps);
    put_le<std::uint32_t>(header.data() + 20, 0);
    out.write(header.data(), header.size());

    std::vector<char> buf(stream.records.size() * TagStream::kRecordBytes);
    char* p = buf.data();
    for (const auto& r : stream.records) {
        put_le<std::uint64_t>(p, r.timestamp_ps);
        put_le<std::uint16_t>(p + 8, r.channel);
        put_le<std::uint16_t>(p + 10, r.flags);
        p += TagStream::kRecordBytes;
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw TagFormatError("write failed");
}

TagStream read_tag_stream(std::istream& in) {
    std::array<char, TagStream::kHeaderBytes> header{};
    if (!in.read(header.data(), header.size())) throw TagFormatError("truncated header");
    if (std::memcmp(header.data(), kMagic.data(), kMagic.size()) != 0) throw TagFormatError("bad magic");
    const auto version = get_le<std::uint16_t>(header.data() + 4);
    if (version != TagStream::kVersion) {
        throw TagFormatError("unsupported version " + std::to_string(version));
    }
    TagStream s;
    s.user_id = get_le<std::uint16_t>(header.data() + 6);
    s.channel_count = get_le<std::uint32_t>(header.data() + 8);
    s.resolution_ps = get_le<std::uint64_t>(header.data() + 12);

    std::array<char, TagStream::kRecordBytes> rec{};
    while (in.read(rec.data(), rec.size())) {
        s.records.push_back({get_le<std::uint64_t>(rec.data()), get_le<std::uint16_t>(rec.data() + 8),
                             get_le<std::uint16_t>(rec.data() + 10)});
    }
    if (in.gcount() != 0) throw TagFormatError("truncated record");
    s.validate();
    return s;
}

void save_tag_stream(const std::filesystem::path& path, const TagStream& stream) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw TagFormatError("cannot open " + path.string());
    write_tag_stream(out, stream);
}

TagStream load_tag_stream(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw TagFormatError("cannot open " + path.string());
    return read_tag_stream(in);
}

}  // namespace qdslab

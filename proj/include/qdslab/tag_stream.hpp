#ifndef QDSLAB_TAG_STREAM_HPP
#define QDSLAB_TAG_STREAM_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <vector>

namespace qdslab {

class TagFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TagRecord {
    std::uint64_t timestamp_ps = 0;
    std::uint16_t channel = 0;
    std::uint16_t flags = 0;

    friend bool operator==(const TagRecord&, const TagRecord&) = default;
};

/// Timetags of one user's detectors.
///
/// On disk (little-endian): 24-byte header
///   "QTAG" | u16 version=1 | u16 user id | u32 channel count | u64 resolution_ps | u32 reserved
/// followed by 12-byte records
///   u64 timestamp_ps | u16 channel | u16 flags=0.
struct TagStream {
    static constexpr std::uint16_t kVersion = 1;
    static constexpr std::size_t kHeaderBytes = 24;
    static constexpr std::size_t kRecordBytes = 12;

    std::uint16_t user_id = 0;
    std::uint32_t channel_count = 2;
    std::uint64_t resolution_ps = 1;
    std::vector<TagRecord> records;

    /// Timestamps of one channel in stream order.
    [[nodiscard]] std::vector<std::uint64_t> channel_times(std::uint16_t channel) const;

    /// Channels inside the channel map and timestamps non-decreasing per channel.
    void validate() const;

    friend bool operator==(const TagStream&, const TagStream&) = default;
};

void write_tag_stream(std::ostream& out, const TagStream& stream);
TagStream read_tag_stream(std::istream& in);

void save_tag_stream(const std::filesystem::path& path, const TagStream& stream);
TagStream load_tag_stream(const std::filesystem::path& path);

}  // namespace qdslab

#endif

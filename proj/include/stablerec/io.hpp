#ifndef STABLEREC_IO_HPP
#define STABLEREC_IO_HPP

#include "stablerec/cells.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace stablerec {

// 17-significant-digit decimal, round-trips a double exactly
std::string fmt_g17(double v);
// C99 hex-float, bit-exact round trip
std::string fmt_hex(double v);
double parse_double(const std::string& s);

struct LoadedWeights {
  CellParams cell;
  std::optional<ReadoutParams> readout;
};

// Weight container: JSON with named matrices ("W", "U", "W_f", ...) and
// hex-float entries so the round trip is bit-exact.
void save_weights(const std::filesystem::path& path, const CellParams& cell,
                  const ReadoutParams* readout = nullptr);
LoadedWeights load_weights(const std::filesystem::path& path);

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path,
            const std::vector<std::string>& header);
  void row(const std::vector<double>& values);
  void close();
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::size_t columns_;
};

std::uint64_t fnv1a64(const std::string& bytes);
std::uint64_t hash_file(const std::filesystem::path& path);

// manifest.txt: one "<hex hash>  <relative name>" line per output file
void write_manifest(const std::filesystem::path& dir,
                    const std::vector<std::filesystem::path>& files);

}  // namespace stablerec

#endif

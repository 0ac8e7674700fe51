#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "vqfuzz/generate.hpp"

namespace vqfuzz::cli {

inline constexpr const char* kRecordsHeader =
    "file,original_id,source_class,original_index,perturber_id,perturber_class,perturber_index,lambda";

// One row of records.csv; the pixels live in images/<file>.
struct RecordRow {
  std::string file;
  std::string original_id;
  std::int64_t source_class = 0;
  std::int64_t original_index = 0;
  std::string perturber_id;
  std::int64_t perturber_class = 0;
  std::int64_t perturber_index = 0;
  double lambda = 0.0;

  // "<k>_<i>.png", the file name of the original and its reconstruction.
  std::string original_file() const;
};

RecordRow to_row(const AdversarialRecord& record);

void write_records(std::ostream& out, const std::vector<RecordRow>& rows);
std::vector<RecordRow> read_records(std::istream& in);
std::vector<RecordRow> read_records(const std::filesystem::path& path);

}  // namespace vqfuzz::cli

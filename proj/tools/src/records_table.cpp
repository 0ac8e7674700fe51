#include "vqfuzz/cli/records_table.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "vqfuzz/error.hpp"
#include "vqfuzz/metrics.hpp"

namespace vqfuzz::cli {

std::string RecordRow::original_file() const {
  return std::to_string(source_class) + "_" + std::to_string(original_index) + ".png";
}

RecordRow to_row(const AdversarialRecord& r) {
  return RecordRow{r.file_name(),  r.original_id,     r.source_class,    r.original_index,
                   r.perturber_id, r.perturber_class, r.perturber_index, r.lambda};
}

void write_records(std::ostream& out, const std::vector<RecordRow>& rows) {
  out << kRecordsHeader << '\n';
  for (const auto& r : rows) {
    for (const auto* id : {&r.original_id, &r.perturber_id})
      require(id->find_first_of(",\"\n\r") == std::string::npos, ErrorKind::InvalidArgument,
              "sample id '" + *id + "' cannot be written to CSV");
    out << r.file << ',' << r.original_id << ',' << r.source_class << ',' << r.original_index << ','
        << r.perturber_id << ',' << r.perturber_class << ',' << r.perturber_index << ','
        << format_number(r.lambda) << '\n';
  }
}

namespace {

template <typename T>
T parse_field(const std::string& text, std::size_t line) {
  T value{};
  auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || res.ec != std::errc{} || res.ptr != text.data() + text.size())
    fail(ErrorKind::CorruptData, "records table line " + std::to_string(line) + ": bad value '" + text + "'");
  return value;
}

}  // namespace

std::vector<RecordRow> read_records(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kRecordsHeader)
    fail(ErrorKind::CorruptData, "records table has an unexpected header");
  std::vector<RecordRow> rows;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string field;
    std::istringstream cells(line);
    while (std::getline(cells, field, ',')) f.push_back(field);
    if (f.size() != 8)
      fail(ErrorKind::CorruptData, "records table line " + std::to_string(n) + " has " +
                                       std::to_string(f.size()) + " fields");
    rows.push_back(RecordRow{f[0], f[1], parse_field<std::int64_t>(f[2], n),
                             parse_field<std::int64_t>(f[3], n), f[4],
                             parse_field<std::int64_t>(f[5], n), parse_field<std::int64_t>(f[6], n),
                             parse_field<double>(f[7], n)});
  }
  return rows;
}

std::vector<RecordRow> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::MissingArtifact, "missing records table " + path.string());
  return read_records(in);
}

}  // namespace vqfuzz::cli

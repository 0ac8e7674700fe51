#include "vqfuzz/metrics.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <map>
#include <set>
#include <sstream>

#include <torch/torch.h>

#include "vqfuzz/error.hpp"

namespace vqfuzz {

namespace {

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  require(a.sizes() == b.sizes(), ErrorKind::ShapeMismatch,
          std::string(what) + ": shape mismatch " + std::string(c10::str(a.sizes())) + " vs " +
              std::string(c10::str(b.sizes())));
}

torch::Tensor gaussian_window(std::int64_t size, double sigma) {
  auto x = torch::arange(size, torch::kFloat64) - static_cast<double>(size - 1) / 2.0;
  auto g = torch::exp(-(x * x) / (2.0 * sigma * sigma));
  g = g / g.sum();
  return torch::outer(g, g).view({1, 1, size, size});
}

}  // namespace

double mse(const torch::Tensor& a, const torch::Tensor& b) {
  require_same_shape(a, b, "mse");
  require(a.numel() > 0, ErrorKind::InvalidArgument, "mse of empty images");
  return (a.to(torch::kFloat64) - b.to(torch::kFloat64)).square().mean().item<double>();
}

std::vector<double> mse_batch(const torch::Tensor& a, const torch::Tensor& b) {
  require_same_shape(a, b, "mse");
  require(a.dim() == 4, ErrorKind::ShapeMismatch, "mse_batch expects (N, C, H, W)");
  auto per = (a.to(torch::kFloat64) - b.to(torch::kFloat64)).square().flatten(1).mean(1).contiguous();
  return {per.data_ptr<double>(), per.data_ptr<double>() + per.numel()};
}

std::vector<double> ssim_batch(const torch::Tensor& a, const torch::Tensor& b,
                               const SsimParams& params) {
  require_same_shape(a, b, "ssim");
  require(a.dim() == 4, ErrorKind::ShapeMismatch, "ssim_batch expects (N, C, H, W)");
  const auto n = a.size(0);
  const auto c = a.size(1);
  const auto h = a.size(2);
  const auto w = a.size(3);
  if (n == 0) return {};
  auto x = a.to(torch::kFloat64).reshape({n * c, 1, h, w});
  auto y = b.to(torch::kFloat64).reshape({n * c, 1, h, w});

  torch::Tensor mu_x, mu_y, var_x, var_y, cov;
  if (h < params.window || w < params.window) {
    mu_x = x.mean({2, 3});
    mu_y = y.mean({2, 3});
    var_x = (x * x).mean({2, 3}) - mu_x * mu_x;
    var_y = (y * y).mean({2, 3}) - mu_y * mu_y;
    cov = (x * y).mean({2, 3}) - mu_x * mu_y;
  } else {
    const auto win = gaussian_window(params.window, params.sigma);
    auto filt = [&](const torch::Tensor& t) { return torch::conv2d(t, win); };
    mu_x = filt(x);
    mu_y = filt(y);
    var_x = filt(x * x) - mu_x * mu_x;
    var_y = filt(y * y) - mu_y * mu_y;
    cov = filt(x * y) - mu_x * mu_y;
  }
  auto map = ((2.0 * mu_x * mu_y + params.c1) * (2.0 * cov + params.c2)) /
             ((mu_x * mu_x + mu_y * mu_y + params.c1) * (var_x + var_y + params.c2));
  auto per = map.reshape({n, c, -1}).mean(2).mean(1).contiguous();
  return {per.data_ptr<double>(), per.data_ptr<double>() + per.numel()};
}

double ssim(const torch::Tensor& a, const torch::Tensor& b, const SsimParams& params) {
  require(a.dim() == 3, ErrorKind::ShapeMismatch, "ssim expects (C, H, W)");
  require_same_shape(a, b, "ssim");
  return ssim_batch(a.unsqueeze(0), b.unsqueeze(0), params).front();
}

const char* to_string(LabelDiversityMode mode) noexcept {
  return mode == LabelDiversityMode::Misclassified ? "misclassified" : "all";
}

LabelDiversityMode parse_label_diversity_mode(const std::string& text) {
  if (text == "misclassified") return LabelDiversityMode::Misclassified;
  if (text == "all") return LabelDiversityMode::AllLabels;
  fail(ErrorKind::InvalidConfig, "label diversity mode must be 'misclassified' or 'all'");
}

double error_rate(std::span<const EvaluatedRecord> records) {
  require(!records.empty(), ErrorKind::InvalidArgument, "error rate of an empty record set");
  std::int64_t wrong = 0;
  for (const auto& r : records) wrong += r.misclassified() ? 1 : 0;
  return static_cast<double>(wrong) / static_cast<double>(records.size());
}

double success_rate(std::span<const EvaluatedRecord> records) {
  require(!records.empty(), ErrorKind::InvalidArgument, "success rate of an empty record set");
  std::map<std::string, bool> hit;
  for (const auto& r : records) hit[r.original_id] = hit[r.original_id] || r.misclassified();
  std::int64_t successes = 0;
  for (const auto& [id, ok] : hit) successes += ok ? 1 : 0;
  return static_cast<double>(successes) / static_cast<double>(hit.size());
}

std::int64_t label_diversity(std::span<const EvaluatedRecord> records, std::int64_t true_class,
                             LabelDiversityMode mode) {
  std::set<std::int64_t> labels;
  for (const auto& r : records)
    if (mode == LabelDiversityMode::AllLabels || r.predicted != true_class) labels.insert(r.predicted);
  return static_cast<std::int64_t>(labels.size());
}

double mean_label_diversity(std::span<const EvaluatedRecord> records, LabelDiversityMode mode) {
  require(!records.empty(), ErrorKind::InvalidArgument, "label diversity of an empty record set");
  std::map<std::string, std::vector<EvaluatedRecord>> groups;
  for (const auto& r : records) groups[r.original_id].push_back(r);
  double total = 0.0;
  for (const auto& [id, group] : groups)
    total += static_cast<double>(label_diversity(group, group.front().source_class, mode));
  return total / static_cast<double>(groups.size());
}

double improved_classification_accuracy(double before, double after) { return after - before; }

MetricsReport build_report(std::span<const EvaluatedRecord> records, LabelDiversityMode mode) {
  require(!records.empty(), ErrorKind::InvalidArgument, "cannot build a report from no records");
  std::vector<std::vector<EvaluatedRecord>> groups;
  std::vector<MetricsRow> rows;
  for (const auto& r : records) {
    std::size_t g = 0;
    while (g < rows.size() &&
           !(rows[g].dataset == r.dataset && rows[g].model == r.model && rows[g].lambda == r.lambda))
      ++g;
    if (g == rows.size()) {
      MetricsRow row;
      row.dataset = r.dataset;
      row.model = r.model;
      row.lambda = r.lambda;
      rows.push_back(std::move(row));
      groups.emplace_back();
    }
    groups[g].push_back(r);
  }
  for (std::size_t g = 0; g < rows.size(); ++g) {
    const auto& group = groups[g];
    auto& row = rows[g];
    double mse_sum = 0.0;
    double ssim_sum = 0.0;
    std::set<std::string> originals;
    for (const auto& r : group) {
      mse_sum += r.mse;
      ssim_sum += r.ssim;
      originals.insert(r.original_id);
    }
    row.records = static_cast<std::int64_t>(group.size());
    row.originals = static_cast<std::int64_t>(originals.size());
    row.mse = mse_sum / static_cast<double>(group.size());
    row.ssim = ssim_sum / static_cast<double>(group.size());
    row.ld = mean_label_diversity(group, mode);
    row.er = error_rate(group);
    row.sr = success_rate(group);
  }
  return MetricsReport{std::move(rows)};
}

std::string format_number(double value) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

namespace {

void check_csv_field(const std::string& field) {
  require(field.find_first_of(",\"\n\r") == std::string::npos, ErrorKind::InvalidArgument,
          "CSV field '" + field + "' contains a separator or quote");
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

double parse_number(const std::string& text) {
  double value = 0.0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size())
    fail(ErrorKind::CorruptData, "bad number '" + text + "' in metrics CSV");
  return value;
}

}  // namespace

void write_metrics_csv(std::ostream& out, const MetricsReport& report) {
  out << kMetricsCsvHeader << '\n';
  for (const auto& row : report.rows) {
    check_csv_field(row.dataset);
    check_csv_field(row.model);
    auto cell = [&](double v) { return row.sample_metrics ? format_number(v) : std::string(); };
    out << row.dataset << ',' << row.model << ',' << format_number(row.lambda) << ','
        << cell(row.mse) << ',' << cell(row.ssim) << ',' << cell(row.ld) << ',' << cell(row.er)
        << ',' << cell(row.sr) << ','
        << (row.ica_before ? format_number(*row.ica_before) : "") << ','
        << (row.ica_after ? format_number(*row.ica_after) : "") << '\n';
  }
}

MetricsReport read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMetricsCsvHeader)
    fail(ErrorKind::CorruptData, "metrics CSV has an unexpected header");
  MetricsReport report;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != 10) fail(ErrorKind::CorruptData, "metrics CSV row has " + std::to_string(f.size()) + " fields");
    MetricsRow row;
    row.dataset = f[0];
    row.model = f[1];
    row.lambda = parse_number(f[2]);
    row.sample_metrics = !f[3].empty();
    if (row.sample_metrics) {
      row.mse = parse_number(f[3]);
      row.ssim = parse_number(f[4]);
      row.ld = parse_number(f[5]);
      row.er = parse_number(f[6]);
      row.sr = parse_number(f[7]);
    }
    if (!f[8].empty()) row.ica_before = parse_number(f[8]);
    if (!f[9].empty()) row.ica_after = parse_number(f[9]);
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace vqfuzz

#include "rifle/io.hpp"

#include <fmt/format.h>

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include "rifle/errors.hpp"

namespace rifle::io {

std::string format_double(double value) { return fmt::format("{:.17g}", value); }

std::string to_csv(const Dataset& data) {
  std::string out;
  const std::size_t width = data.feature_size();
  for (std::size_t r = 0; r < data.size(); ++r) {
    const double label = data.targets[r * (data.targets.size() / data.size())];
    if (data.is_classification()) {
      out += fmt::format("{}", static_cast<long long>(label));
    } else {
      out += format_double(label);
    }
    for (std::size_t c = 0; c < width; ++c) {
      out += ',';
      out += format_double(data.features[r * width + c]);
    }
    out += '\n';
  }
  return out;
}

namespace {

double parse_field(std::string_view field, const std::string& source, std::size_t line,
                   std::size_t column) {
  double value = 0.0;
  const auto* first = field.data();
  const auto* last = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || field.empty()) {
    throw InvalidArgument(fmt::format("{}:{}: column {}: cannot parse '{}' as a number", source, line,
                                      column + 1, field));
  }
  return value;
}

}  // namespace

Dataset parse_csv(const std::string& text, int num_classes, const std::string& source) {
  std::vector<double> features;
  std::vector<double> labels;
  std::size_t width = 0;
  std::size_t line_no = 0;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t column = 0;
    std::size_t start = 0;
    std::size_t row_width = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      const std::string_view field(line.data() + start,
                                   (comma == std::string::npos ? line.size() : comma) - start);
      const double v = parse_field(field, source, line_no, column);
      if (!std::isfinite(v)) {
        throw InvalidArgument(fmt::format("{}:{}: column {}: non-finite value", source, line_no, column + 1));
      }
      if (column == 0) {
        labels.push_back(v);
      } else {
        features.push_back(v);
        ++row_width;
      }
      ++column;
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (row_width == 0) throw InvalidArgument(fmt::format("{}:{}: row has no features", source, line_no));
    if (width == 0) width = row_width;
    if (row_width != width) {
      throw InvalidArgument(fmt::format("{}:{}: expected {} feature columns, found {}", source, line_no,
                                        width, row_width));
    }
  }
  if (labels.empty()) throw InvalidArgument(source + ": no data rows");
  const std::size_t n = labels.size();
  Dataset d{Tensor({n, width}, std::move(features)), Tensor({n}, std::move(labels)), 0};
  if (num_classes != 0) {
    double max_label = 0.0;
    for (double y : d.targets.data()) {
      if (y < 0.0 || y != std::floor(y)) {
        throw InvalidArgument(fmt::format("{}: label {} is not a class index", source, y));
      }
      max_label = std::max(max_label, y);
    }
    d.num_classes = num_classes > 0 ? static_cast<std::size_t>(num_classes)
                                    : static_cast<std::size_t>(max_label) + 1;
    d.validate();
  }
  return d;
}

Dataset read_csv(const std::filesystem::path& path, int num_classes) {
  return parse_csv(read_file(path), num_classes, path.string());
}

std::string telemetry_csv(const std::vector<TelemetryRecord>& records) {
  std::string out = "epoch,step,eta,train_loss,train_top1,test_loss,test_top1,reset_event\n";
  for (const auto& r : records) {
    out += fmt::format("{},{},{},{},{},{},{},{}\n", r.epoch, r.step, format_double(r.eta),
                       format_double(r.train_loss), format_double(r.train_top1),
                       format_double(r.test_loss), format_double(r.test_top1),
                       r.reset_event ? 1 : 0);
  }
  return out;
}

std::string gradnorm_csv(const std::vector<TelemetryRecord>& records) {
  std::string out = "epoch,layer,fro_norm\n";
  for (const auto& r : records) {
    for (const auto& [layer, norm] : r.grad_norms) {
      out += fmt::format("{},{},{}\n", r.epoch, layer, format_double(norm));
    }
  }
  return out;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const auto tid = std::hash<std::thread::id>{}(std::this_thread::get_id());
  fs::path tmp = path;
  tmp += fmt::format(".tmp{:x}", tid);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("write to " + tmp.string() + " failed");
  }
  fs::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace rifle::io

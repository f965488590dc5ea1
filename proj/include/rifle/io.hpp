#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "rifle/dataset.hpp"
#include "rifle/trainer.hpp"

namespace rifle::io {

/// 17 significant digits, '.' decimal point; round-trips every double.
std::string format_double(double value);

/// Headerless CSV: column 0 is the label (integer class index, or the
/// regression target), the remaining columns are the features row-major.
std::string to_csv(const Dataset& data);

/// Parses to_csv output. `num_classes` == 0 means regression; a negative
/// value infers the class count as max label + 1. Errors name the line.
Dataset parse_csv(const std::string& text, int num_classes, const std::string& source = "<csv>");
Dataset read_csv(const std::filesystem::path& path, int num_classes);

/// `epoch,step,eta,train_loss,train_top1,test_loss,test_top1,reset_event`
std::string telemetry_csv(const std::vector<TelemetryRecord>& records);
/// `epoch,layer,fro_norm`, one row per (epoch, probed parameter).
std::string gradnorm_csv(const std::vector<TelemetryRecord>& records);

/// Writes via a temporary sibling file and rename, creating parent directories.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

}  // namespace rifle::io

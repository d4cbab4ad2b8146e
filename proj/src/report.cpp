#include "invmahal/report.hpp"

#include "invmahal/data_io.hpp"

namespace invmahal {

namespace {

std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string format_report(std::span<const EvalReport> reports) {
  std::string out;
  if (!reports.empty()) {
    for (const auto& [k, v] : reports.front().config_echo) out += "config." + k + "=" + v + "\n";
  }
  for (const auto& r : reports) {
    const std::string p = r.task_name + "." + r.method + ".";
    out += p + "error_rate=" + format_exact(r.error_rate) + "\n";
    out += p + "error_std=" + format_exact(r.error_std) + "\n";
    out += p + "errors=" + std::to_string(r.errors) + "\n";
    out += p + "total=" + std::to_string(r.total) + "\n";
    out += p + "failures=" + std::to_string(r.failures) + "\n";
    for (const auto& [name, t] : r.per_class) {
      out += p + "class." + name + ".errors=" + std::to_string(t.errors) + "\n";
      out += p + "class." + name + ".total=" + std::to_string(t.total) + "\n";
    }
    for (std::size_t f = 0; f < r.per_fold_errors.size(); ++f) {
      out += p + "fold." + std::to_string(f) + ".error_rate=" + format_exact(r.per_fold_errors[f]) + "\n";
    }
  }
  return out;
}

std::string format_report_csv(std::span<const EvalReport> reports) {
  std::string out = "task,method,error_rate,error_std,errors,total,failures\n";
  for (const auto& r : reports) {
    out += csv_cell(r.task_name) + "," + csv_cell(r.method) + "," + format_exact(r.error_rate) + "," +
           format_exact(r.error_std) + "," + std::to_string(r.errors) + "," +
           std::to_string(r.total) + "," + std::to_string(r.failures) + "\n";
  }
  return out;
}

std::string format_timings_csv(std::span<const EvalReport> reports) {
  std::string out = "task,method,stage,seconds\n";
  for (const auto& r : reports) {
    for (const auto& [stage, s] : r.timings) {
      out += csv_cell(r.task_name) + "," + csv_cell(r.method) + "," + csv_cell(stage) + "," +
             format_exact(s) + "\n";
    }
  }
  return out;
}

std::string format_bench_csv(const BenchTable& table) {
  std::string out;
  for (const auto& [k, v] : table.machine) out += "# " + k + "=" + v + "\n";
  out += "n,d,repetitions,median_seconds,min_seconds,max_seconds,sweeps,support,kkt_violation\n";
  for (const auto& r : table.rows) {
    out += std::to_string(r.n) + "," + std::to_string(r.d) + "," + std::to_string(r.repetitions) +
           "," + format_exact(r.median_seconds) + "," + format_exact(r.min_seconds) + "," +
           format_exact(r.max_seconds) + "," + std::to_string(r.sweeps) + "," +
           std::to_string(r.support) + "," + format_exact(r.kkt_violation) + "\n";
  }
  return out;
}

void write_reports(const std::filesystem::path& stem, std::span<const EvalReport> reports) {
  const std::string base = stem.string();
  write_file(base + ".txt", format_report(reports));
  write_file(base + ".csv", format_report_csv(reports));
  write_file(base + ".timings.csv", format_timings_csv(reports));
}

}  // namespace invmahal

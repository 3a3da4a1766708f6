#include "lmvae/trainer/events.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "lmvae/common/binary_io.hpp"
#include "lmvae/common/errors.hpp"

namespace lmvae::trainer {

std::string format_real(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace {

std::string cell(const std::optional<std::size_t>& v) { return v ? std::to_string(*v) : ""; }
std::string cell(const std::optional<double>& v) { return v ? format_real(*v) : ""; }

std::string cell(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + format_real(v[i]);
    return s;
}

std::string quoted(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
}

}  // namespace

std::string Event::to_csv() const {
    return kind + "," + cell(task) + "," + cell(epoch) + "," + cell(item) + "," + cell(chosen) + "," + cell(elbo) +
           "," + cell(p_assign) + "," + cell(v_select) + "," + cell(score) + "," + cell(value) + "," +
           cell(true_class) + "," + cell(predicted_class) + "," + quoted(note) + "\n";
}

EventLog::EventLog(std::string path) : path_(std::move(path)), text_(std::string(kEventHeader) + "\n") {
    write_all();
}

EventLog EventLog::resume(std::string path, std::uint64_t offset) {
    EventLog log;
    log.path_ = std::move(path);
    auto bytes = read_file_bytes(log.path_);
    if (bytes.size() < offset)
        throw FormatError(log.path_ + ": event log is shorter (" + std::to_string(bytes.size()) +
                          " bytes) than the checkpoint offset " + std::to_string(offset));
    log.text_.assign(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(offset));
    if (log.text_.rfind(kEventHeader, 0) != 0) throw FormatError(log.path_ + ": not an event log");
    log.write_all();
    return log;
}

void EventLog::append(const Event& e) {
    const auto row = e.to_csv();
    text_ += row;
    if (path_.empty()) return;
    std::ofstream out(path_, std::ios::binary | std::ios::app);
    out << row;
    if (!out) throw std::runtime_error("cannot append to " + path_);
}

void EventLog::write_all() const {
    if (path_.empty()) return;
    write_file_bytes(path_, std::span(reinterpret_cast<const std::uint8_t*>(text_.data()), text_.size()));
}

}  // namespace lmvae::trainer

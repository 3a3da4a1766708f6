#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace lmvae::trainer {

/// Column schema of events.csv. Vector-valued cells are ';'-joined.
inline constexpr const char* kEventHeader =
    "kind,task,epoch,item,chosen,elbo,p_assign,v_select,score,value,true_class,predicted_class,note";

/// One row of the run log.
///   selection  task switch in fixed-K mode: per-expert ELBO, p(c), chosen
///   novelty    task switch in expansion mode: score = per-expert scores in elbo, value = min, note add|update
///   epoch      mean training loss of an epoch in value
///   transfer   transfer score (mse) of the active expert on the active task
///   freeze     note carries the parameter digest
///   eval       item = evaluated task, note = metric, value
///   classify   item = test sample id, chosen expert, true and predicted class
///   audit      freeze digest check at run end, value 1 or 0
struct Event {
    std::string kind;
    std::optional<std::size_t> task;
    std::optional<std::size_t> epoch;
    std::optional<std::size_t> item;
    std::optional<std::size_t> chosen;
    std::vector<double> elbo;
    std::vector<double> p_assign;
    std::vector<double> v_select;
    std::optional<double> score;
    std::optional<double> value;
    std::optional<std::size_t> true_class;
    std::optional<std::size_t> predicted_class;
    std::string note;

    std::string to_csv() const;
};

/// Append-only CSV log, kept in memory and mirrored to a file when a path
/// is given.
class EventLog {
public:
    EventLog() = default;
    /// Starts a fresh file holding only the header.
    explicit EventLog(std::string path);
    /// Reopens an existing log and cuts it back to `offset` bytes.
    static EventLog resume(std::string path, std::uint64_t offset);

    void append(const Event& e);
    std::uint64_t offset() const { return text_.size(); }
    const std::string& text() const { return text_; }
    const std::string& path() const { return path_; }

private:
    void write_all() const;

    std::string path_;
    std::string text_;
};

std::string format_real(double v);

}  // namespace lmvae::trainer

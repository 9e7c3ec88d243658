#pragma once

#include <array>
#include <string>
#include <string_view>

namespace unist {

enum class Task { ASR, NMT, ST };

inline constexpr std::array<Task, 3> kAllTasks = {Task::ASR, Task::NMT, Task::ST};

std::string_view to_string(Task task);
// Case-insensitive; throws ConfigError on anything else.
Task parse_task(std::string_view name);

inline bool is_speech_task(Task task) { return task != Task::NMT; }

}  // namespace unist

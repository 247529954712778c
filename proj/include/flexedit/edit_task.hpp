#pragma once

#include <stdexcept>
#include <string>

namespace flexedit {

enum class TaskKind { replace, add, remove };

inline std::string to_string(TaskKind k) {
    switch (k) {
    case TaskKind::replace: return "replace";
    case TaskKind::add: return "add";
    case TaskKind::remove: return "remove";
    }
    throw std::invalid_argument("to_string: bad TaskKind");
}

inline TaskKind task_from_string(const std::string &s) {
    if (s == "replace") return TaskKind::replace;
    if (s == "add") return TaskKind::add;
    if (s == "remove") return TaskKind::remove;
    throw std::invalid_argument("task_from_string: unknown task kind '" + s + "'");
}

} // namespace flexedit

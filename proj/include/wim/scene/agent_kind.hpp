#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace wim::scene {

enum class AgentKind : std::uint8_t { vehicle = 0, pedestrian = 1, cyclist = 2 };

inline constexpr std::array<std::string_view, 3> kAgentKindNames = {"vehicle", "pedestrian", "cyclist"};

inline std::string_view to_string(AgentKind k) { return kAgentKindNames.at(static_cast<std::size_t>(k)); }

inline AgentKind agent_kind_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kAgentKindNames.size(); ++i)
    if (kAgentKindNames[i] == s) return static_cast<AgentKind>(i);
  throw std::invalid_argument("unknown agent kind '" + std::string(s) + "'");
}

}  // namespace wim::scene

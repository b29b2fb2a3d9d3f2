#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace proagym {

/// Literal the event generator emits when the latest activities imply no
/// further environment events.
inline constexpr std::string_view kNoMoreEvents = "[NO_MORE_EVENTS]";

/// Named plain-text prompt templates with `{{placeholder}}` slots.
///
/// Built-in defaults cover every template the library uses; a prompts
/// directory may override any of them with `<name>.txt`.
class PromptLibrary {
public:
    static const PromptLibrary& defaults();
    /// Defaults overlaid with every `<name>.txt` found in `dir`.
    static PromptLibrary load(const std::string& dir);

    const std::string& raw(std::string_view name) const;
    /// Substitutes every `{{key}}`. Throws ContractError for an unknown
    /// template or a placeholder missing from `vars`.
    std::string render(std::string_view name, const std::map<std::string, std::string>& vars = {}) const;

    std::vector<std::string> names() const;
    void set(std::string name, std::string text) { templates_[std::move(name)] = std::move(text); }

private:
    std::map<std::string, std::string, std::less<>> templates_;
};

}  // namespace proagym

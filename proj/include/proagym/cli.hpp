#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "proagym/gateway.hpp"
#include "proagym/service.hpp"

namespace proagym {

/// Exit codes: 0 success, 1 domain error, 2 usage error.
int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// "live" or "scripted:<fixture.jsonl>".
std::unique_ptr<Gateway> make_gateway(const std::string& spec, const AppConfig& config);

}  // namespace proagym

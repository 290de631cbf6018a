#pragma once

#include "binary_io.hpp"
#include "prnu/pcn.hpp"

namespace prnu::pcn::detail {

void write_model(prnu::detail::ByteWriter& w, const PcnModel& model);
PcnModel read_model(prnu::detail::ByteReader& r);

} // namespace prnu::pcn::detail

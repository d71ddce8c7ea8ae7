#pragma once

#include <filesystem>

#include "mexit/model.hpp"

namespace mexit {

/// Versioned little-endian binary checkpoint, magic "MEXIT1".
/// Stores config, placement, head kind, seed and all named parameter groups.
void save_checkpoint(const MultiExitNetwork& net, const std::filesystem::path& path);

MultiExitNetwork load_checkpoint(const std::filesystem::path& path);

}  // namespace mexit

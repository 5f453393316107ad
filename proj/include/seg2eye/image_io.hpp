#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace seg2eye {

// 8-bit single-channel PNG I/O. Throws std::runtime_error with the path on failure.
void write_png_gray(const std::string& path, const std::vector<std::uint8_t>& pixels, int height,
                    int width);
std::vector<std::uint8_t> read_png_gray(const std::string& path, int& height, int& width);

}  // namespace seg2eye

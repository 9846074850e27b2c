/*
 * Copyright 2026-present the rtfusion authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *   http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <filesystem>

#include "rtf/image.hpp"

namespace rtf {

/// Reads an 8-bit grayscale or RGB PNG into [0,1] floats. Palette, 16-bit
/// and alpha variants are normalized to gray8/rgb8 on the way in.
/// Throws IoError on unreadable files.
Image read_png(const std::filesystem::path& path);

/// Writes a 1-channel (grayscale) or 3-channel (RGB) image as an 8-bit PNG.
/// Values are clamped to [0,1] and quantized to 0..255.
void write_png(const std::filesystem::path& path, const Image& img);

}  // namespace rtf

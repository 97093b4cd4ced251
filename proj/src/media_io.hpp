#pragma once

#include <string>

#include "codecs.hpp"

namespace avldm {

// Raw frame-stack container (.avf): magic "AVFS", u32 version, u32 dtype
// (0 = f32), u32 T/C/H/W, f32 frame_rate, then row-major float32 frames.
void write_frame_stack(const std::string& path, const VideoTensor& video);
VideoTensor read_frame_stack(const std::string& path);

// PNG sequence export (frame_000.png, ...); values mapped from [-1,1].
// Returns the number of frames written. Requires libpng at build time.
int export_png_sequence(const std::string& dir, const VideoTensor& video);
bool png_export_available();

}  // namespace avldm

#include "media_io.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#if AVLDM_HAVE_PNG
#include <png.h>
#endif

namespace avldm {

namespace {
constexpr char kMagic[4] = {'A', 'V', 'F', 'S'};
constexpr uint32_t kVersion = 1;
}  // namespace

void write_frame_stack(const std::string& path, const VideoTensor& video) {
    check(video.data.rank() == 4, "frame stack must be [T,C,H,W]");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write frame stack: " + path);
    f.write(kMagic, 4);
    uint32_t ver = kVersion, dtype = 0;
    f.write(reinterpret_cast<const char*>(&ver), 4);
    f.write(reinterpret_cast<const char*>(&dtype), 4);
    for (int i = 0; i < 4; i++) {
        uint32_t d = static_cast<uint32_t>(video.data.shape[static_cast<size_t>(i)]);
        f.write(reinterpret_cast<const char*>(&d), 4);
    }
    float rate = static_cast<float>(video.frame_rate);
    f.write(reinterpret_cast<const char*>(&rate), 4);
    std::vector<float> buf(video.data.data.begin(), video.data.data.end());
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!f) throw std::runtime_error("frame stack write failed: " + path);
}

VideoTensor read_frame_stack(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read frame stack: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("not a frame stack file: " + path);
    uint32_t ver = 0, dtype = 0, dims[4] = {};
    f.read(reinterpret_cast<char*>(&ver), 4);
    f.read(reinterpret_cast<char*>(&dtype), 4);
    if (ver != kVersion || dtype != 0) throw std::runtime_error("unsupported frame stack format: " + path);
    for (auto& d : dims) f.read(reinterpret_cast<char*>(&d), 4);
    float rate = 0;
    f.read(reinterpret_cast<char*>(&rate), 4);
    VideoTensor v;
    v.frame_rate = rate;
    v.data = Tensor({dims[0], dims[1], dims[2], dims[3]});
    std::vector<float> buf(static_cast<size_t>(v.data.numel()));
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!f) throw std::runtime_error("truncated frame stack: " + path);
    for (int64_t i = 0; i < v.data.numel(); i++) v.data[i] = buf[static_cast<size_t>(i)];
    return v;
}

bool png_export_available() {
#if AVLDM_HAVE_PNG
    return true;
#else
    return false;
#endif
}

#if AVLDM_HAVE_PNG
namespace {
void write_png(const std::string& path, const std::vector<unsigned char>& rgb, int w, int h) {
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw std::runtime_error("cannot write png: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        std::fclose(fp);
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png encode failed: " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < h; y++) png_write_row(png, const_cast<unsigned char*>(rgb.data()) + y * w * 3);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}
}  // namespace
#endif

int export_png_sequence(const std::string& dir, const VideoTensor& video) {
#if AVLDM_HAVE_PNG
    std::filesystem::create_directories(dir);
    const int64_t T = video.frames(), H = video.height(), W = video.width();
    std::vector<unsigned char> rgb(static_cast<size_t>(H * W * 3));
    for (int64_t t = 0; t < T; t++) {
        for (int64_t y = 0; y < H; y++)
            for (int64_t x = 0; x < W; x++)
                for (int c = 0; c < 3; c++) {
                    double v = video.data[((t * 3 + c) * H + y) * W + x];
                    rgb[static_cast<size_t>((y * W + x) * 3 + c)] =
                        static_cast<unsigned char>(std::lround(std::clamp((v + 1.0) / 2.0, 0.0, 1.0) * 255.0));
                }
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%03d.png", static_cast<int>(t));
        write_png(dir + "/" + name, rgb, static_cast<int>(W), static_cast<int>(H));
    }
    return static_cast<int>(T);
#else
    (void)dir;
    (void)video;
    throw std::runtime_error("png export not available in this build");
#endif
}

}  // namespace avldm

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"

#include "flexedit/image.hpp"
#include "flexedit/segmentation_http.hpp"

using namespace flexedit;
namespace fs = std::filesystem;

namespace {

std::string png_bytes_for(const Mask2D &m) {
    fs::path dir = fs::temp_directory_path() / "flexedit_http_test";
    fs::create_directories(dir);
    std::string path = (dir / "mask.png").string();
    save_mask_png(path, m);
    std::ifstream f(path, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

ImageHandle handle_with_path(const std::string &path) {
    ImageHandle h;
    h.id = "img1";
    h.path = path;
    return h;
}

// In-process service the provider talks to.  Each test tweaks the
// handler, so the fixture records the last request body for assertions.
class HttpProviderTest : public ::testing::Test {
protected:
    void SetUp() override {
        server_.Post("/segment", [this](const httplib::Request &req, httplib::Response &res) {
            last_body = req.body;
            handler(req, res);
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        ASSERT_GT(port_, 0);
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    void TearDown() override {
        server_.stop();
        if (thread_.joinable()) thread_.join();
    }

    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
    std::string last_body;
    std::function<void(const httplib::Request &, httplib::Response &)> handler;
};

} // namespace

TEST_F(HttpProviderTest, FoundMaskRoundTrips) {
    Mask2D m(4, 4);
    m.at(1, 2) = 1;
    m.at(3, 0) = 1;
    std::string png = png_bytes_for(m);
    handler = [&](const httplib::Request &, httplib::Response &res) {
        res.set_content(png, "image/png");
    };

    HttpSegmentationProvider provider("127.0.0.1", port_);
    SegmentationResult r = provider.segment(handle_with_path("/data/img1.png"), "cat");
    ASSERT_EQ(r.status, SegStatus::found);
    ASSERT_TRUE(r.mask.same_shape(m));
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) EXPECT_EQ(r.mask.at(y, x), m.at(y, x));

    // the request carried the path and label as json
    nlohmann::json body = nlohmann::json::parse(last_body);
    EXPECT_EQ(body["image_path"], "/data/img1.png");
    EXPECT_EQ(body["label"], "cat");
    EXPECT_EQ(provider.name(), "http:127.0.0.1:" + std::to_string(port_));
}

TEST_F(HttpProviderTest, NoContentMeansObjectAbsent) {
    handler = [](const httplib::Request &, httplib::Response &res) { res.status = 204; };
    HttpSegmentationProvider provider("127.0.0.1", port_);
    SegmentationResult r = provider.segment(handle_with_path("/data/img1.png"), "unicorn");
    EXPECT_EQ(r.status, SegStatus::empty);
}

TEST_F(HttpProviderTest, AllZeroMaskIsEmptyNotFound) {
    std::string png = png_bytes_for(Mask2D(4, 4));
    handler = [&](const httplib::Request &, httplib::Response &res) {
        res.set_content(png, "image/png");
    };
    HttpSegmentationProvider provider("127.0.0.1", port_);
    SegmentationResult r = provider.segment(handle_with_path("/data/img1.png"), "cat");
    EXPECT_EQ(r.status, SegStatus::empty);
}

TEST_F(HttpProviderTest, ErrorStatusSurfacesAsFailure) {
    handler = [](const httplib::Request &, httplib::Response &res) { res.status = 500; };
    HttpSegmentationProvider provider("127.0.0.1", port_);
    SegmentationResult r = provider.segment(handle_with_path("/data/img1.png"), "cat");
    EXPECT_EQ(r.status, SegStatus::error);
    EXPECT_NE(r.message.find("500"), std::string::npos);
}

TEST_F(HttpProviderTest, NonPngBodyIsFailure) {
    handler = [](const httplib::Request &, httplib::Response &res) {
        res.set_content("not a png", "image/png");
    };
    HttpSegmentationProvider provider("127.0.0.1", port_);
    SegmentationResult r = provider.segment(handle_with_path("/data/img1.png"), "cat");
    EXPECT_EQ(r.status, SegStatus::error);
    EXPECT_FALSE(r.message.empty());
}

TEST_F(HttpProviderTest, MissingImagePathNeverHitsTheService) {
    handler = [](const httplib::Request &, httplib::Response &res) { res.status = 200; };
    HttpSegmentationProvider provider("127.0.0.1", port_);
    ImageHandle h;
    h.id = "img1"; // no path
    SegmentationResult r = provider.segment(h, "cat");
    EXPECT_EQ(r.status, SegStatus::error);
    EXPECT_NE(r.message.find("path"), std::string::npos);
    EXPECT_TRUE(last_body.empty());
}

TEST(HttpProviderStandalone, UnreachableServiceIsFailure) {
    // nothing listens here; keep the timeout short so the test stays fast
    HttpSegmentationProvider provider("127.0.0.1", 1, "/segment", 1);
    ImageHandle h;
    h.id = "img1";
    h.path = "/data/img1.png";
    SegmentationResult r = provider.segment(h, "cat");
    EXPECT_EQ(r.status, SegStatus::error);
    EXPECT_NE(r.message.find("unreachable"), std::string::npos);
}

#pragma once

#include <mutex>
#include <string>

#include "httplib.h"
#include "json.hpp"

#include "flexedit/masks.hpp"

namespace flexedit {

// Adapter for an external grounded-segmentation service.  One POST per
// request with the image path and label; the service answers with a
// single-channel PNG mask.  Timeouts and non-200 statuses surface as
// provider failures; requests are serialized per instance.
class HttpSegmentationProvider final : public SegmentationProvider {
public:
    HttpSegmentationProvider(std::string host, int port, std::string route = "/segment",
                             int timeout_seconds = 10)
        : host_(std::move(host)), port_(port), route_(std::move(route)),
          timeout_seconds_(timeout_seconds) {}

    std::string name() const override { return "http:" + host_ + ":" + std::to_string(port_); }

    SegmentationResult segment(const ImageHandle &image, const std::string &label) override {
        std::lock_guard<std::mutex> lock(mutex_);
        SegmentationResult r;
        if (image.path.empty()) {
            r.message = "image has no path to send to the segmentation service";
            return r;
        }
        nlohmann::json body;
        body["image_path"] = image.path;
        body["label"] = label;

        httplib::Client client(host_, port_);
        client.set_connection_timeout(timeout_seconds_, 0);
        client.set_read_timeout(timeout_seconds_, 0);
        auto res = client.Post(route_, body.dump(), "application/json");
        if (!res) {
            r.message = "segmentation service unreachable: " + httplib::to_string(res.error());
            return r;
        }
        if (res->status == 204) {
            r.status = SegStatus::empty;
            return r;
        }
        if (res->status != 200) {
            r.message = "segmentation service returned status " + std::to_string(res->status);
            return r;
        }
        try {
            r.mask = load_mask_png_from_memory(res->body.data(), res->body.size());
        } catch (const std::exception &e) {
            r.message = e.what();
            return r;
        }
        r.status = r.mask.any() ? SegStatus::found : SegStatus::empty;
        return r;
    }

private:
    std::string host_;
    int port_;
    std::string route_;
    int timeout_seconds_;
    std::mutex mutex_;
};

} // namespace flexedit

// Enroll a device, deliver an encrypted model to it over an in-memory link,
// and check that the device recovers the provider's accuracy.

#include <iostream>
#include <thread>

#include "puflock/puflock.hpp"

using namespace puflock;

int main() {
  ExperimentSetup setup;
  setup.per_class = 300;
  setup.train_rows = 2500;
  const auto ex = prepare_experiment(setup);
  std::cout << "provider model accuracy: " << ex.plain_accuracy << "\n";

  CrpStore db;
  Provider provider(db, ex.model, ProviderConfig{}, 42);
  Device device(new_device(secret_from_u64(7), calibrate_sigma(0.01)), DeviceStore{}, DeviceConfig{}, 7);

  auto [device_end, provider_end] = memory_pipe();
  std::thread server([&, &link = provider_end] {
    serve_registration(provider, *link, 8);
    serve_provider_session(provider, *link);
  });

  if (auto err = register_device(device, *device_end); !err.empty()) {
    std::cerr << "registration failed: " << err << "\n";
    server.join();
    return 1;
  }
  auto session = run_device_session(device, *device_end);
  server.join();

  if (session.phase() != Phase::delivered) {
    std::cerr << "deployment failed: " << session.failure() << "\n";
    return 1;
  }
  std::cout << "ciphertext used as weights: " << evaluate(ciphertext_as_model(*session.container()), ex.test).accuracy
            << "\n"
            << "delivered model accuracy: " << evaluate(*session.model(), ex.test).accuracy << "\n"
            << "unused CRPs left: " << db.count(device.id(), false) << "\n";
}

#pragma once

#include "puflock/bits.hpp"
#include "puflock/bytes.hpp"
#include "puflock/chaos.hpp"
#include "puflock/cipher.hpp"
#include "puflock/dataset.hpp"
#include "puflock/ecc.hpp"
#include "puflock/encrypted_model.hpp"
#include "puflock/error.hpp"
#include "puflock/experiments.hpp"
#include "puflock/frame.hpp"
#include "puflock/hash.hpp"
#include "puflock/model.hpp"
#include "puflock/puf.hpp"
#include "puflock/session.hpp"
#include "puflock/store.hpp"
#include "puflock/train.hpp"
#include "puflock/transport.hpp"

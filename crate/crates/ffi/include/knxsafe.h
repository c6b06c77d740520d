/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef KNXSAFE_H
#define KNXSAFE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call.
 */
typedef enum KnxStatus {
  KNX_STATUS_OK = 0,
  KNX_STATUS_NULL_POINTER = 1,
  KNX_STATUS_INVALID_UTF8 = 2,
  KNX_STATUS_INVALID_ARGUMENT = 3,
  KNX_STATUS_WIRE = 4,
  KNX_STATUS_COMPILE = 5,
  KNX_STATUS_RUNTIME = 6,
  KNX_STATUS_NOT_FOUND = 7,
  KNX_STATUS_IO = 8,
  KNX_STATUS_BUFFER_TOO_SMALL = 9,
  KNX_STATUS_PANIC = 10,
} KnxStatus;

/**
 * A type-checked app with a private address for each of its channels.
 */
typedef struct KnxProgram KnxProgram;

/**
 * Installed apps running on a simulated bus.
 */
typedef struct KnxSimulation KnxSimulation;

/**
 * A telegram in plain fields. `destination` is a group address when
 * `is_group` is nonzero, an individual address otherwise.
 */
typedef struct KnxTelegram {
  uint16_t source;
  uint16_t destination;
  uint8_t is_group;
  uint8_t priority;
  uint8_t repeated;
  uint8_t payload_len;
  uint8_t payload[16];
} KnxTelegram;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message. Returns the size needed
 * including the NUL; nothing is copied when `cap` is smaller.
 */
size_t knx_last_error(char *buf, size_t cap);

/**
 * Parses `1/2/3`, `1/515` or a raw number.
 */
enum KnxStatus knx_group_address_parse(const char *input, uint16_t *raw);

/**
 * Three-level text of a group address.
 */
enum KnxStatus knx_group_address_format(uint16_t raw, char *buf, size_t cap, size_t *needed);

/**
 * Parses `area.line.device`.
 */
enum KnxStatus knx_individual_address_parse(const char *input, uint16_t *raw);

enum KnxStatus knx_individual_address_format(uint16_t raw, char *buf, size_t cap, size_t *needed);

/**
 * 16-bit KNX float of `value`. Values out of range or not finite fail.
 */
enum KnxStatus knx_float16_encode(double value, uint16_t *word);

/**
 * Fails on the invalid-data marker 0x7FFF.
 */
enum KnxStatus knx_float16_decode(uint16_t word, double *value);

/**
 * Frames a telegram into `buf`; `written` receives the frame length.
 */
enum KnxStatus knx_telegram_encode(const struct KnxTelegram *telegram,
                                   uint8_t *buf,
                                   size_t cap,
                                   size_t *written);

enum KnxStatus knx_telegram_decode(const uint8_t *frame, size_t len, struct KnxTelegram *telegram);

/**
 * Type-checks `source` against the prototype JSON. Each channel of the
 * prototype gets its own address so the program can be verified alone.
 */
enum KnxStatus knx_program_compile(const char *name,
                                   const char *prototype_json,
                                   const char *source,
                                   struct KnxProgram **program);

void knx_program_free(struct KnxProgram *program);

/**
 * Checks that the program's iteration preserves its invariant. `valid` is
 * set to 1 or 0; the report is kept for [`knx_program_report`].
 */
enum KnxStatus knx_program_verify(struct KnxProgram *program, int32_t *valid);

/**
 * Text of the last verification of `program`; empty before the first.
 */
enum KnxStatus knx_program_report(const struct KnxProgram *program,
                                  char *buf,
                                  size_t cap,
                                  size_t *needed);

/**
 * Starts the apps installed under `home` on a fresh simulated bus.
 * `initial_json` maps addresses (`1/2/3` or `app.INSTANCE.channel`) to the
 * device values present before start.
 */
enum KnxStatus knx_simulation_open(const char *home,
                                   const char *initial_json,
                                   struct KnxSimulation **simulation);

void knx_simulation_free(struct KnxSimulation *simulation);

/**
 * A sensor sends `value_json` (`true`, `21.5`, ...) to `address`.
 */
enum KnxStatus knx_simulation_inject(struct KnxSimulation *simulation,
                                     const char *address,
                                     const char *value_json);

/**
 * Moves the clock forward, running due timers.
 */
enum KnxStatus knx_simulation_advance(struct KnxSimulation *simulation, uint64_t seconds);

/**
 * JSON text of the value last seen on the bus at `address`.
 */
enum KnxStatus knx_simulation_value(const struct KnxSimulation *simulation,
                                    const char *address,
                                    char *buf,
                                    size_t cap,
                                    size_t *needed);

/**
 * 1 while `app` runs, 0 once the runtime stopped it.
 */
enum KnxStatus knx_simulation_app_alive(const struct KnxSimulation *simulation,
                                        const char *app,
                                        int32_t *alive);

/**
 * Number of messages the apps sent through the messaging stub.
 */
enum KnxStatus knx_simulation_message_count(const struct KnxSimulation *simulation, size_t *count);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KNXSAFE_H */

export * from "./schemas.js";
export * from "./client.js";
export * from "./sia.js";
export * from "./mia.js";
export * from "./monitor.js";
export * from "./flows.js";

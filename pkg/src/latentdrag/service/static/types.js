/** Wire types of the /v1 session API. Coordinates are [row, col] image pixels. */
export {};
